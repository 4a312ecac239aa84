import json
import time
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient
from PIL import Image

from objectadd import cli
from objectadd.errors import CapabilityError
from objectadd.jobs import JobStore
from objectadd.server import create_app

FAST_CONFIG = (
    "total_steps = 10\n"
    "inpaint_step = 4  # mid-trajectory swap\n"
    "guidance_iters = 2\n"
    "inversion_inject_step = 8\n"
)

FAST_CONFIG_DICT = {
    "total_steps": 10,
    "inpaint_step": 4,
    "guidance_iters": 2,
    "inversion_inject_step": 8,
}

CASE_FILE = "12\n10\n26\n28\na red hat\n"


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "fast.cfg"
    path.write_text(FAST_CONFIG)
    return str(path)


def edit_args(out, cfg_path, **overrides):
    args = {
        "--prompt": "a woman wearing glasses",
        "--seed": "7",
        "--box": "12,10,26,28",
        "--object": "a hat",
        "--config": cfg_path,
        "--out": str(out),
    }
    args.update(overrides)
    flat = []
    for key, val in args.items():
        if val is not None:
            flat += [key, val]
    return flat


class TestCliGenerate:
    def test_writes_base_and_manifest(self, runner, tmp_path, cfg_path):
        out = tmp_path / "gen"
        result = runner.invoke(cli.main, [
            "generate", "--prompt", "a cat", "--seed", "3",
            "--config", cfg_path, "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        assert (out / "base.png").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["request"] == {"prompt": "a cat", "seed": 3}
        assert manifest["config"]["total_steps"] == 10

    def test_deterministic_bytes(self, runner, tmp_path, cfg_path):
        outs = []
        for name in ("g1", "g2"):
            out = tmp_path / name
            runner.invoke(cli.main, [
                "generate", "--prompt", "a cat", "--seed", "3",
                "--config", cfg_path, "--out", str(out),
            ], catch_exceptions=False)
            outs.append((out / "base.png").read_bytes())
        assert outs[0] == outs[1]


class TestCliEdit:
    def test_full_artifact_set(self, runner, tmp_path, cfg_path):
        out = tmp_path / "edit"
        result = runner.invoke(cli.main, ["edit"] + edit_args(out, cfg_path))
        assert result.exit_code == 0, result.output
        for name in ("base.png", "edited.png", "refocused_mask.png",
                      "expanded_mask.png", "traces.json", "manifest.json"):
            assert (out / name).exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert set(manifest["output_hashes"]) == {
            "base_image", "edited_image", "refocused_mask", "expanded_mask"
        }

    def test_deterministic_hashes(self, runner, tmp_path, cfg_path):
        hashes = []
        for name in ("e1", "e2"):
            out = tmp_path / name
            runner.invoke(cli.main, ["edit"] + edit_args(out, cfg_path),
                          catch_exceptions=False)
            hashes.append(json.loads((out / "manifest.json").read_text())["output_hashes"])
        assert hashes[0] == hashes[1]

    def test_case_file_equivalent_to_flags(self, runner, tmp_path, cfg_path):
        case = tmp_path / "001.txt"
        case.write_text(CASE_FILE)
        out_flags = tmp_path / "flags"
        out_case = tmp_path / "case"
        runner.invoke(cli.main, ["edit"] + edit_args(
            out_flags, cfg_path, **{"--object": "a red hat"}),
            catch_exceptions=False)
        runner.invoke(cli.main, [
            "edit", "--prompt", "a woman wearing glasses", "--seed", "7",
            "--case-file", str(case), "--config", cfg_path, "--out", str(out_case),
        ], catch_exceptions=False)
        h1 = json.loads((out_flags / "manifest.json").read_text())["output_hashes"]
        h2 = json.loads((out_case / "manifest.json").read_text())["output_hashes"]
        assert h1 == h2

    def test_base_manifest_replay(self, runner, tmp_path, cfg_path):
        gen_out = tmp_path / "gen"
        runner.invoke(cli.main, [
            "generate", "--prompt", "a woman wearing glasses", "--seed", "7",
            "--config", cfg_path, "--out", str(gen_out),
        ], catch_exceptions=False)
        direct = tmp_path / "direct"
        replay = tmp_path / "replay"
        runner.invoke(cli.main, ["edit"] + edit_args(direct, cfg_path),
                      catch_exceptions=False)
        runner.invoke(cli.main, [
            "edit", "--base-manifest", str(gen_out / "manifest.json"),
            "--box", "12,10,26,28", "--object", "a hat",
            "--config", cfg_path, "--out", str(replay),
        ], catch_exceptions=False)
        h1 = json.loads((direct / "manifest.json").read_text())["output_hashes"]
        h2 = json.loads((replay / "manifest.json").read_text())["output_hashes"]
        assert h1 == h2
        # base image unchanged by the edit
        gen_bytes = (gen_out / "base.png").read_bytes()
        assert gen_bytes == (replay / "base.png").read_bytes()


class TestCliExitCodes:
    def test_config_error_is_2(self, runner, tmp_path, cfg_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("not_a_field = 1\n")
        result = runner.invoke(cli.main, ["edit"] + edit_args(
            tmp_path / "o", str(bad)))
        assert result.exit_code == 2

    def test_missing_object_is_2(self, runner, tmp_path, cfg_path):
        result = runner.invoke(cli.main, [
            "edit", "--prompt", "p", "--seed", "1", "--box", "1,1,8,8",
            "--config", cfg_path, "--out", str(tmp_path / "o"),
        ])
        assert result.exit_code == 2

    def test_malformed_box_is_2(self, runner, tmp_path, cfg_path):
        result = runner.invoke(cli.main, ["edit"] + edit_args(
            tmp_path / "o", cfg_path, **{"--box": "1,2,three,4"}))
        assert result.exit_code == 2

    def test_out_of_bounds_box_is_2(self, runner, tmp_path, cfg_path):
        result = runner.invoke(cli.main, ["edit"] + edit_args(
            tmp_path / "o", cfg_path, **{"--box": "50,50,30,30"}))
        assert result.exit_code == 2

    def test_backend_failure_is_3(self, runner, tmp_path, cfg_path, monkeypatch):
        class BrokenBackend:
            def to_record(self):
                return {"kind": "broken"}

            def descriptor(self):
                raise CapabilityError("adapter lost its weights")

        monkeypatch.setattr(cli, "make_backend", lambda kind, seed: BrokenBackend())
        result = runner.invoke(cli.main, ["edit"] + edit_args(tmp_path / "o", cfg_path))
        assert result.exit_code == 3

    def test_segmentation_failure_is_4(self, runner, tmp_path, cfg_path):
        white = tmp_path / "white.png"
        Image.fromarray(np.full((64, 64, 3), 255, dtype=np.uint8)).save(white)
        result = runner.invoke(cli.main, [
            "edit-real", "--image", str(white),
            "--prompt", "a desk", "--seed", "1",
            "--box", "16,16,32,32", "--object", "a mug",
            "--config", cfg_path, "--out", str(tmp_path / "o"),
        ])
        assert result.exit_code == 4


class TestCliEval:
    def test_report_written(self, runner, tmp_path, cfg_path):
        cases = tmp_path / "cases"
        cases.mkdir()
        (cases / "001.txt").write_text(CASE_FILE)
        (cases / "001.json").write_text(
            json.dumps({"base_prompt": "a woman wearing glasses", "seed": 7})
        )
        fid = tmp_path / "fid.json"
        fid.write_text(json.dumps({"001": 17.5}))
        report_path = tmp_path / "report.json"
        result = runner.invoke(cli.main, [
            "eval", "--cases", str(cases), "--config", cfg_path,
            "--external-fid", str(fid), "--report", str(report_path),
        ])
        assert result.exit_code == 0, result.output
        report = json.loads(report_path.read_text())
        assert report["case_count"] == 1
        assert report["rows"][0]["external_fid"] == 17.5
        assert "mean_by_pixels" in report["aggregates"]


@pytest.fixture
def client(tmp_path):
    store = JobStore(tmp_path / "artifacts")
    app = create_app(store, backend_kind="toy", backend_seed=0, workers=2)
    with TestClient(app) as c:
        yield c


def wait_done(client, job_id, timeout=30.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        view = client.get(f"/api/jobs/{job_id}").json()
        if view["state"] in ("done", "failed"):
            return view
        time.sleep(0.05)
    raise TimeoutError(f"job {job_id} still {view['state']}")


def post_edit(client, **overrides):
    body = {
        "prompt": "a woman wearing glasses",
        "seed": 7,
        "box": {"top": 10, "left": 12, "height": 28, "width": 26},
        "object_prompt": "a hat",
        "config": FAST_CONFIG_DICT,
    }
    body.update(overrides)
    return client.post("/api/edits", json=body)


class TestHttpService:
    def test_generate_flow(self, client):
        resp = client.post("/api/generate", json={
            "prompt": "a cat", "seed": 3, "config": FAST_CONFIG_DICT,
        })
        assert resp.status_code == 200
        view = wait_done(client, resp.json()["job_id"])
        assert view["state"] == "done", view["error"]
        img = client.get(view["artifacts"]["base"])
        assert img.status_code == 200
        assert img.headers["content-type"] == "image/png"

    def test_edit_flow_with_artifacts(self, client):
        view = wait_done(client, post_edit(client).json()["job_id"])
        assert view["state"] == "done", view["error"]
        assert set(view["artifacts"]) >= {
            "base", "edited", "refocused_mask", "expanded_mask"
        }
        for link in view["artifacts"].values():
            assert client.get(link).status_code == 200

    def test_edit_chained_from_generate_job(self, client):
        gen = client.post("/api/generate", json={
            "prompt": "a woman wearing glasses", "seed": 7,
            "config": FAST_CONFIG_DICT,
        }).json()
        wait_done(client, gen["job_id"])
        chained = post_edit(client, prompt=None, seed=None,
                            base_job_id=gen["job_id"])
        view = wait_done(client, chained.json()["job_id"])
        assert view["state"] == "done", view["error"]
        direct = wait_done(client, post_edit(client).json()["job_id"])
        assert view["manifest"]["output_hashes"] == direct["manifest"]["output_hashes"]

    def test_identical_posts_distinct_ids_identical_hashes(self, client):
        a = wait_done(client, post_edit(client).json()["job_id"])
        b = wait_done(client, post_edit(client).json()["job_id"])
        assert a["job_id"] != b["job_id"]
        assert a["manifest"]["output_hashes"] == b["manifest"]["output_hashes"]

    def test_unknown_job_404(self, client):
        assert client.get("/api/jobs/doesnotexist").status_code == 404
        assert client.get("/api/images/doesnotexist.base").status_code == 404
        assert post_edit(client, base_job_id="nope").status_code == 404

    def test_invalid_box_422(self, client):
        bad_bounds = post_edit(client, box={"top": 50, "left": 50,
                                            "height": 30, "width": 30})
        assert bad_bounds.status_code == 422
        assert bad_bounds.json()["detail"][0]["loc"] == ["body", "box"]
        bad_shape = post_edit(client, box={"top": 0, "left": 0,
                                           "height": 0, "width": 10})
        assert bad_shape.status_code == 422

    def test_missing_prompt_and_base_422(self, client):
        assert post_edit(client, prompt=None, seed=None).status_code == 422

    def test_attention_endpoint(self, client):
        view = wait_done(client, post_edit(client).json()["job_id"])
        job_id = view["job_id"]
        resp = client.get(f"/api/jobs/{job_id}/attention/4/1")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        arr = np.asarray(Image.open(__import__("io").BytesIO(resp.content)))
        assert arr.shape == (32, 32)
        assert client.get(f"/api/jobs/{job_id}/attention/99/1").status_code == 404

    def test_masks_endpoint(self, client):
        view = wait_done(client, post_edit(client).json()["job_id"])
        resp = client.get(f"/api/jobs/{view['job_id']}/masks")
        assert resp.status_code == 200
        body = resp.json()
        assert np.array(body["refocused_mask"]).shape == (32, 32)
        assert np.array(body["expanded_mask"]).shape == (16, 16)

    def test_failed_job_reports_error(self, client):
        # unknown config key fails inside the worker, not at submit time
        resp = post_edit(client, config={"bogus_key": 1})
        view = wait_done(client, resp.json()["job_id"])
        assert view["state"] == "failed"
        assert "bogus_key" in view["error"]


class TestCliHttpParity:
    def test_same_request_same_hashes(self, runner, tmp_path, cfg_path, client):
        out = tmp_path / "cli-edit"
        runner.invoke(cli.main, ["edit"] + edit_args(out, cfg_path),
                      catch_exceptions=False)
        cli_hashes = json.loads((out / "manifest.json").read_text())["output_hashes"]
        view = wait_done(client, post_edit(client).json()["job_id"])
        assert view["manifest"]["output_hashes"] == cli_hashes
