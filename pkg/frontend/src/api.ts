// Thin typed client for the edit service. The UI never computes pipeline
// math; everything it shows comes from these endpoints.

import type { CanvasBox } from './box'

export interface JobView {
  job_id: string
  state: 'queued' | 'running' | 'done' | 'failed'
  error: string | null
  artifacts: Record<string, string>
  manifest: Record<string, unknown>
}

export interface EditRequest {
  prompt?: string
  seed?: number
  base_job_id?: string
  box: CanvasBox
  object_prompt: string
  config?: Record<string, unknown>
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(`api error ${status}: ${JSON.stringify(detail)}`)
  }
}

async function asJson(resp: Response): Promise<unknown> {
  let body: unknown = null
  try {
    body = await resp.json()
  } catch {
    // non-JSON error bodies still surface the status code
  }
  if (!resp.ok) {
    const detail =
      body && typeof body === 'object' && 'detail' in body
        ? (body as { detail: unknown }).detail
        : body
    throw new ApiError(resp.status, detail)
  }
  return body
}

export class Client {
  constructor(
    private base = '',
    private fetchFn: typeof fetch = fetch,
  ) {}

  async generate(prompt: string, seed: number, config?: Record<string, unknown>): Promise<JobView> {
    const resp = await this.fetchFn(`${this.base}/api/generate`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ prompt, seed, config }),
    })
    return (await asJson(resp)) as JobView
  }

  async submitEdit(req: EditRequest): Promise<JobView> {
    const resp = await this.fetchFn(`${this.base}/api/edits`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(req),
    })
    return (await asJson(resp)) as JobView
  }

  async getJob(jobId: string): Promise<JobView> {
    const resp = await this.fetchFn(`${this.base}/api/jobs/${jobId}`)
    return (await asJson(resp)) as JobView
  }

  /** Poll every intervalMs until the job settles (done or failed). */
  async pollJob(
    jobId: string,
    intervalMs = 1000,
    onUpdate?: (view: JobView) => void,
    timeoutMs = 120000,
  ): Promise<JobView> {
    const deadline = Date.now() + timeoutMs
    for (;;) {
      const view = await this.getJob(jobId)
      onUpdate?.(view)
      if (view.state === 'done' || view.state === 'failed') return view
      if (Date.now() > deadline) throw new Error(`job ${jobId} timed out`)
      await new Promise((resolve) => setTimeout(resolve, intervalMs))
    }
  }

  imageUrl(artifactPath: string): string {
    return `${this.base}${artifactPath}`
  }

  attentionUrl(jobId: string, t: number, layer: number): string {
    return `${this.base}/api/jobs/${jobId}/attention/${t}/${layer}`
  }

  async masks(jobId: string): Promise<{
    refocused_mask?: number[][]
    expanded_mask?: number[][]
  }> {
    const resp = await this.fetchFn(`${this.base}/api/jobs/${jobId}/masks`)
    return (await asJson(resp)) as { refocused_mask?: number[][]; expanded_mask?: number[][] }
  }
}
