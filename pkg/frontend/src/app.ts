// Single-page client: generate a base image, drag a box, submit an edit,
// poll the job, and render the result with mask/attention overlays.

import { Client, type JobView } from './api'
import { boxToScreenRect, dragToBox, type CanvasBox, type Point } from './box'

const client = new Client()

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id)
  if (!el) throw new Error(`missing element #${id}`)
  return el as T
}

interface SliderSpec {
  key: string
  label: string
  min: number
  max: number
  step: number
  value: number
}

// GuidanceConfig tunables with stock defaults.
const SLIDERS: SliderSpec[] = [
  { key: 'total_steps', label: 'denoise steps', min: 10, max: 100, step: 1, value: 50 },
  { key: 'inpaint_step', label: 'swap step', min: 1, max: 50, step: 1, value: 15 },
  { key: 'latent_inject_frac', label: 'latent window', min: 0.05, max: 0.5, step: 0.05, value: 0.2 },
  { key: 'attn_inject_frac', label: 'attention window', min: 0.05, max: 0.6, step: 0.05, value: 0.3 },
  { key: 'cluster_count', label: 'clusters', min: 2, max: 12, step: 1, value: 6 },
  { key: 'h1_threshold', label: 'cluster in-box fraction', min: 0.05, max: 0.95, step: 0.05, value: 0.35 },
  { key: 'h2_threshold', label: 'expansion distance', min: 0, max: 15, step: 0.5, value: 5 },
]

interface AppState {
  zoom: number
  imageSize: { width: number; height: number }
  baseJob: JobView | null
  baseImage: HTMLImageElement | null
  box: CanvasBox | null
  dragStart: Point | null
  dragPreview: CanvasBox | null
}

const state: AppState = {
  zoom: 1,
  imageSize: { width: 64, height: 64 },
  baseJob: null,
  baseImage: null,
  box: null,
  dragStart: null,
  dragPreview: null,
}

function banner(message: string, kind: 'info' | 'error' = 'info') {
  const el = $('banner')
  el.textContent = message
  el.className = kind
}

function readConfig(): Record<string, number> {
  const config: Record<string, number> = {}
  for (const spec of SLIDERS) {
    config[spec.key] = Number(($(`slider-${spec.key}`) as unknown as HTMLInputElement).value)
  }
  return config
}

/** Mirror of the server's swap-step window rule so mistakes surface early. */
export function inpaintStepProblem(config: Record<string, number>): string | null {
  const t = config.total_steps
  const step = config.inpaint_step
  if (step < 0.3 * t || step >= 0.5 * t) {
    return `swap step ${step} must be in [${0.3 * t}, ${0.5 * t}) for ${t} steps`
  }
  return null
}

function validateConfig() {
  const problem = inpaintStepProblem(readConfig())
  $('config-warning').textContent = problem ?? ''
  return problem === null
}

function drawCanvas() {
  const canvas = $('canvas') as unknown as HTMLCanvasElement
  const zoom = state.zoom
  canvas.width = state.imageSize.width * zoom
  canvas.height = state.imageSize.height * zoom
  const ctx = canvas.getContext('2d')
  if (!ctx) return
  ctx.imageSmoothingEnabled = false
  ctx.fillStyle = '#222'
  ctx.fillRect(0, 0, canvas.width, canvas.height)
  if (state.baseImage) {
    ctx.drawImage(state.baseImage, 0, 0, canvas.width, canvas.height)
  }
  const box = state.dragPreview ?? state.box
  if (box) {
    const rect = boxToScreenRect(box, zoom)
    ctx.strokeStyle = state.dragPreview ? '#ffd54d' : '#4dd0ff'
    ctx.lineWidth = 2
    ctx.strokeRect(rect.x, rect.y, rect.w, rect.h)
  }
}

function canvasPoint(ev: MouseEvent): Point {
  const canvas = $('canvas') as unknown as HTMLCanvasElement
  const bounds = canvas.getBoundingClientRect()
  return { x: ev.clientX - bounds.left, y: ev.clientY - bounds.top }
}

async function loadImage(url: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image()
    img.onload = () => resolve(img)
    img.onerror = () => reject(new Error(`failed to load ${url}`))
    img.src = url
  })
}

async function runGenerate() {
  const prompt = ($('prompt') as unknown as HTMLInputElement).value.trim()
  const seed = Number(($('seed') as unknown as HTMLInputElement).value)
  if (!prompt) {
    banner('enter a base prompt first', 'error')
    return
  }
  banner('generating base image...')
  try {
    const job = await client.generate(prompt, seed, { total_steps: readConfig().total_steps })
    const done = await client.pollJob(job.job_id, 1000, (v) => banner(`base job: ${v.state}`))
    if (done.state === 'failed') {
      banner(`generation failed: ${done.error}`, 'error')
      return
    }
    state.baseJob = done
    state.baseImage = await loadImage(client.imageUrl(done.artifacts.base))
    state.box = null
    banner('base ready; drag a box and describe the object')
    drawCanvas()
  } catch (err) {
    banner(`${err}`, 'error')
  }
}

async function renderResult(view: JobView) {
  const edited = await loadImage(client.imageUrl(view.artifacts.edited))
  const base = await loadImage(client.imageUrl(view.artifacts.base))
  for (const [img, canvasId] of [
    [base, 'result-base'],
    [edited, 'result-edited'],
  ] as const) {
    const canvas = $(canvasId) as unknown as HTMLCanvasElement
    canvas.width = state.imageSize.width * state.zoom
    canvas.height = state.imageSize.height * state.zoom
    const ctx = canvas.getContext('2d')
    if (!ctx) continue
    ctx.imageSmoothingEnabled = false
    ctx.drawImage(img, 0, 0, canvas.width, canvas.height)
    if (state.box) {
      const rect = boxToScreenRect(state.box, state.zoom)
      ctx.strokeStyle = '#4dd0ff'
      ctx.lineWidth = 2
      ctx.strokeRect(rect.x, rect.y, rect.w, rect.h)
    }
  }
  const attn = $('result-attention') as unknown as HTMLImageElement
  const traces = (view.manifest as { config?: { inpaint_step?: number } }).config
  const t = traces?.inpaint_step ?? 15
  attn.src = client.attentionUrl(view.job_id, t, 1)
  ;($('use-as-base') as unknown as HTMLButtonElement).disabled = false
}

async function runEdit() {
  if (!state.baseJob) {
    banner('generate (or chain) a base image first', 'error')
    return
  }
  if (!state.box) {
    banner('drag a box on the image first', 'error')
    return
  }
  const object = ($('object') as unknown as HTMLInputElement).value.trim()
  if (!object) {
    banner('describe the object to add', 'error')
    return
  }
  if (!validateConfig()) {
    banner('fix the config warning first', 'error')
    return
  }
  banner('submitting edit...')
  try {
    const job = await client.submitEdit({
      base_job_id: state.baseJob.job_id,
      box: state.box,
      object_prompt: object,
      config: readConfig(),
    })
    const done = await client.pollJob(job.job_id, 1000, (v) => banner(`edit job: ${v.state}`))
    if (done.state === 'failed') {
      banner(`edit failed: ${done.error}`, 'error')
      return
    }
    banner('edit done')
    await renderResult(done)
    state.lastEdit = done
  } catch (err) {
    banner(`${err}`, 'error')
  }
}

interface AppState {
  lastEdit?: JobView | null
}

async function useEditedAsBase() {
  const last = state.lastEdit
  if (!last) return
  // The edited job regenerates its own base deterministically, so chaining
  // means pointing the next edit at this job and showing its edited image.
  state.baseJob = last
  state.baseImage = await loadImage(client.imageUrl(last.artifacts.edited))
  state.box = null
  banner('chained: edited image is the new base; draw the next box')
  drawCanvas()
}

function buildSliders() {
  const host = $('sliders')
  for (const spec of SLIDERS) {
    const row = document.createElement('label')
    row.className = 'slider-row'
    const value = document.createElement('span')
    value.textContent = String(spec.value)
    const input = document.createElement('input')
    input.type = 'range'
    input.id = `slider-${spec.key}`
    input.min = String(spec.min)
    input.max = String(spec.max)
    input.step = String(spec.step)
    input.value = String(spec.value)
    input.addEventListener('input', () => {
      value.textContent = input.value
      validateConfig()
    })
    row.append(`${spec.label} `, input, value)
    host.append(row)
  }
}

export function wireUp() {
  buildSliders()
  const canvas = $('canvas') as unknown as HTMLCanvasElement
  canvas.addEventListener('mousedown', (ev) => {
    state.dragStart = canvasPoint(ev)
  })
  canvas.addEventListener('mousemove', (ev) => {
    if (!state.dragStart) return
    state.dragPreview = dragToBox(
      state.dragStart, canvasPoint(ev), state.zoom,
      state.imageSize.width, state.imageSize.height,
    )
    drawCanvas()
  })
  canvas.addEventListener('mouseup', (ev) => {
    if (!state.dragStart) return
    const box = dragToBox(
      state.dragStart, canvasPoint(ev), state.zoom,
      state.imageSize.width, state.imageSize.height,
    )
    state.dragStart = null
    state.dragPreview = null
    if (box) {
      state.box = box
      $('box-readout').textContent =
        `box: left=${box.left} top=${box.top} w=${box.width} h=${box.height}`
    }
    drawCanvas()
  })
  ;($('zoom') as unknown as HTMLSelectElement).addEventListener('change', (ev) => {
    state.zoom = Number((ev.target as HTMLSelectElement).value)
    drawCanvas()
  })
  $('generate').addEventListener('click', () => void runGenerate())
  $('submit').addEventListener('click', () => void runEdit())
  $('use-as-base').addEventListener('click', () => void useEditedAsBase())
  drawCanvas()
}

if (typeof document !== 'undefined' && document.getElementById('canvas')) {
  wireUp()
}
