// Typed client for the wafersem inspection service HTTP API.
// Every piece of data the UI shows comes through this module.

export interface RejectedFile {
  file: string;
  reason: string;
}

export interface DatasetInfo {
  id: string;
  image_count: number;
  has_ground_truth: boolean;
  created: number;
  rejected: RejectedFile[];
}

export interface ImageEntry {
  id: string;
  has_ground_truth: boolean;
}

export type JobStatus = 'queued' | 'running' | 'done' | 'failed';

export interface JobInfo {
  id: string;
  kind: string;
  status: JobStatus;
  progress: { done: number; total: number };
  result: Record<string, unknown> | null;
  error: string | null;
  created: number;
}

export interface RawDetection {
  class: string;
  score: number;
  bbox: [number, number, number, number];
  source?: string;
}

export interface PredictionFile {
  model: string;
  images: { image: string; detections: RawDetection[] }[];
}

/** Server error envelope, rethrown with its code and offending fields. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
    readonly fields: string[] = []
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

export interface PollOptions {
  intervalMs?: number;
  timeoutMs?: number;
  onProgress?: (job: JobInfo) => void;
}

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

export class InspectClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchImpl: typeof fetch = fetch
  ) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      let payload: unknown = null;
      try {
        payload = await response.json();
      } catch {
        // non-JSON error body; fall through to the generic message
      }
      const envelope = (payload as { error?: { code?: string; message?: string; fields?: string[] } })
        ?.error;
      throw new ApiError(
        response.status,
        envelope?.code ?? 'http_error',
        envelope?.message ?? `request failed with status ${response.status}`,
        envelope?.fields ?? []
      );
    }
    return response.json();
  }

  async uploadDataset(fileName: string, data: Blob | Uint8Array): Promise<DatasetInfo> {
    const blob =
      data instanceof Blob ? data : new Blob([new Uint8Array(data)], { type: 'application/zip' });
    const form = new FormData();
    form.append('file', blob, fileName);
    return (await this.request('/api/datasets', { method: 'POST', body: form })) as DatasetInfo;
  }

  async listDatasets(): Promise<DatasetInfo[]> {
    const body = (await this.request('/api/datasets')) as { datasets: DatasetInfo[] };
    return body.datasets;
  }

  async listImages(datasetId: string): Promise<ImageEntry[]> {
    const body = (await this.request(
      `/api/datasets/${encodeURIComponent(datasetId)}/images`
    )) as { images: ImageEntry[] };
    return body.images;
  }

  async submitJob(kind: string, params: Record<string, unknown>): Promise<string> {
    const body = (await this.request('/api/jobs', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ kind, params }),
    })) as { job_id: string };
    return body.job_id;
  }

  async getJob(jobId: string): Promise<JobInfo> {
    return (await this.request(`/api/jobs/${encodeURIComponent(jobId)}`)) as JobInfo;
  }

  async listJobs(): Promise<JobInfo[]> {
    const body = (await this.request('/api/jobs')) as { jobs: JobInfo[] };
    return body.jobs;
  }

  /** Poll until the job settles; resolves for done AND failed (caller checks). */
  async waitForJob(jobId: string, options: PollOptions = {}): Promise<JobInfo> {
    const interval = options.intervalMs ?? 250;
    const deadline = Date.now() + (options.timeoutMs ?? 60_000);
    for (;;) {
      const job = await this.getJob(jobId);
      options.onProgress?.(job);
      if (job.status === 'done' || job.status === 'failed') return job;
      if (Date.now() > deadline) {
        throw new ApiError(0, 'poll_timeout', `job ${jobId} still ${job.status} at timeout`);
      }
      await sleep(interval);
    }
  }

  artifactUrl(artifactId: string): string {
    return `${this.baseUrl}/api/artifacts/${encodeURIComponent(artifactId)}`;
  }

  async fetchArtifact(artifactId: string): Promise<Response> {
    const response = await this.fetchImpl(this.artifactUrl(artifactId));
    if (!response.ok) {
      throw new ApiError(response.status, 'http_error', `artifact ${artifactId} unavailable`);
    }
    return response;
  }

  async fetchPredictions(artifactId: string): Promise<PredictionFile> {
    const response = await this.fetchArtifact(artifactId);
    return (await response.json()) as PredictionFile;
  }

  overlayUrl(dataset: string, image: string, pred: string, minScore: number): string {
    const query = new URLSearchParams({
      dataset,
      image,
      pred,
      min_score: String(minScore),
    });
    return `${this.baseUrl}/api/overlay?${query.toString()}`;
  }

  async fetchOverlay(
    dataset: string,
    image: string,
    pred: string,
    minScore: number
  ): Promise<Response> {
    const response = await this.fetchImpl(this.overlayUrl(dataset, image, pred, minScore));
    if (!response.ok) {
      throw new ApiError(response.status, 'http_error', `overlay for ${image} unavailable`);
    }
    return response;
  }
}
