/** Shared types for the v1 service API. */

export interface UploadResponse {
  image_id: string;
  width: number;
  height: number;
}

export interface SegmentationResponse {
  image_id: string;
  width: number;
  height: number;
  codes: Record<string, string>;
  labels: number[][];
}

export interface InvertParams {
  steps: number;
  seed: number;
  backend: string;
}

export interface AnonymizeParams {
  lambda_id: number;
  lambda_cfg: number;
  lambda_img: number;
  t_skip: number;
  mask_start: number;
  seed: number;
}

export type MaskSpec = string | { inline: string } | null;

export interface JobResult {
  image_url?: string;
  manifest?: unknown;
  identity_distance?: number;
  inversion_id?: string;
  inversion_fingerprints?: Record<string, string>;
  backbone_fingerprint?: string;
  schedule_fingerprint?: string;
}

export interface Job {
  id: string;
  kind: "invert" | "anonymize";
  state: "queued" | "running" | "done" | "failed";
  config: Record<string, unknown>;
  created: number;
  started: number | null;
  finished: number | null;
  result?: JobResult;
  error?: string;
}

export interface ApiError {
  error: string;
}

export interface HistoryEntry {
  jobId: string;
  config: AnonymizeParams & { mask: MaskSpec };
  identityDistance: number | null;
  imageUrl: string | null;
  manifest: unknown;
}
