// Typed client for the annotation service. Every mutation the UI makes
// goes through this module; nothing else talks to the backend.

import type {
  ApiBox,
  LabelSetPayload,
  PutLabelsResponse,
  QueueItem,
  ReviewAction,
  ReviewResponse,
  RunStatus,
} from "./types";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function parseError(response: Response): Promise<ApiError> {
  let detail = response.statusText;
  try {
    const body = await response.json();
    if (typeof body?.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body, keep the status text
  }
  return new ApiError(response.status, detail);
}

export class ApiClient {
  constructor(
    private readonly baseUrl = "",
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  getQueue(kind: "key_annotation" | "pseudo_review"): Promise<QueueItem[]> {
    return this.request(`/api/queue?kind=${kind}`);
  }

  getLabels(sampleId: string): Promise<LabelSetPayload> {
    return this.request(`/api/labels/${sampleId}`);
  }

  putLabels(
    sampleId: string,
    revision: number,
    boxes: ApiBox[],
    annotator: string,
  ): Promise<PutLabelsResponse> {
    return this.request(`/api/labels/${sampleId}`, {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ sample_id: sampleId, revision, annotator, boxes }),
    });
  }

  review(
    sampleId: string,
    action: ReviewAction,
    boxes?: ApiBox[],
  ): Promise<ReviewResponse> {
    const body: { action: ReviewAction; boxes?: ApiBox[] } = { action };
    if (action === "edit") body.boxes = boxes ?? [];
    return this.request(`/api/review/${sampleId}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  getStatus(): Promise<RunStatus> {
    return this.request("/api/status");
  }

  imageUrl(sampleId: string): string {
    return `${this.baseUrl}/api/image/${sampleId}`;
  }
}

/**
 * Submit labels with optimistic concurrency. On a 409 the current server
 * copy is fetched and `onConflict` decides whether to retry on top of it;
 * there is never a silent overwrite and never more than one retry.
 */
export async function putLabelsWithRetry(
  client: ApiClient,
  sampleId: string,
  revision: number,
  boxes: ApiBox[],
  annotator: string,
  onConflict: (current: LabelSetPayload) => Promise<boolean> | boolean,
): Promise<PutLabelsResponse | null> {
  try {
    return await client.putLabels(sampleId, revision, boxes, annotator);
  } catch (err) {
    if (!(err instanceof ApiError) || err.status !== 409) throw err;
    const current = await client.getLabels(sampleId);
    if (!(await onConflict(current))) return null;
    return client.putLabels(sampleId, current.revision, boxes, annotator);
  }
}
