/** Typed client for the v1 service API; the only network surface. */

import type {
  AnonymizeParams, ApiError, InvertParams, Job, MaskSpec,
  SegmentationResponse, UploadResponse,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiHttpError extends Error {
  constructor(readonly status: number, readonly reason: string) {
    super(`HTTP ${status}: ${reason}`);
  }
}

export class ApiClient {
  constructor(private readonly baseUrl: string,
              private readonly fetchImpl: FetchLike = fetch.bind(globalThis)) {}

  private async parse<T>(response: Response): Promise<T> {
    if (!response.ok) {
      let reason = response.statusText;
      try {
        const body = (await response.json()) as ApiError;
        if (body.error) reason = body.error;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiHttpError(response.status, reason);
    }
    return (await response.json()) as T;
  }

  async uploadImage(payload: Uint8Array | ArrayBuffer): Promise<UploadResponse> {
    const response = await this.fetchImpl(`${this.baseUrl}/api/images`, {
      method: "POST",
      headers: { "Content-Type": "image/png" },
      body: payload instanceof Uint8Array
        ? payload.slice().buffer as ArrayBuffer
        : payload,
    });
    return this.parse(response);
  }

  async segmentation(imageId: string): Promise<SegmentationResponse> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/api/images/${imageId}/segmentation`);
    return this.parse(response);
  }

  async invert(imageId: string, params: InvertParams): Promise<Job> {
    const response = await this.fetchImpl(`${this.baseUrl}/api/invert`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ image_id: imageId, ...params }),
    });
    return this.parse(response);
  }

  async anonymize(inversionId: string, params: AnonymizeParams,
                  mask: MaskSpec, backend: string): Promise<Job> {
    const response = await this.fetchImpl(`${this.baseUrl}/api/anonymize`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ inversion_id: inversionId, ...params, mask, backend }),
    });
    return this.parse(response);
  }

  async job(jobId: string): Promise<Job> {
    const response = await this.fetchImpl(`${this.baseUrl}/api/jobs/${jobId}`);
    return this.parse(response);
  }

  resultImageUrl(path: string): string {
    return `${this.baseUrl}${path}`;
  }
}
