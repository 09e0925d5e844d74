// Wire types mirroring the annotation service JSON exactly.

export interface ApiBox {
  class: string;
  bbox: [number, number, number, number];
  confidence: number;
  source: string;
}

export interface LabelSetPayload {
  sample_id: string;
  revision: number;
  annotator: string;
  boxes: ApiBox[];
}

export interface QueueItem {
  sample_id: string;
  kind: "key_annotation" | "pseudo_review";
  width: number;
  height: number;
  boxes: ApiBox[];
  revision: number;
  cluster_id: number | null;
}

export interface RunStatus {
  iteration: number;
  phase: string;
  pools: Record<string, number>;
  metrics: Array<Record<string, number | null>>;
}

export interface PutLabelsResponse {
  sample_id: string;
  revision: number;
}

export type ReviewAction = "approve" | "reject" | "edit";

export interface ReviewResponse {
  sample_id: string;
  status: string;
}
