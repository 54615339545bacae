/**
 * Session state machine for the steer-observe loop.
 *
 * One image, one inversion, then any number of anonymize submissions.
 * At most one anonymize job is in flight (submission is disabled while
 * one runs) so the loop stays unambiguous; the previous preview is
 * marked stale until the new result lands. Job updates are poll-based:
 * 1 s interval with capped exponential backoff. History is append-only
 * and exportable as the list of server RunManifests, replayable through
 * the CLI.
 */

import { ApiClient, ApiHttpError } from "./api.js";
import { matchPreset, type RegionSets } from "./presets.js";
import { fieldFromServerError, validateParams } from "./validation.js";
import type {
  AnonymizeParams, HistoryEntry, Job, MaskSpec, SegmentationResponse,
} from "./types.js";

export type SleepFn = (ms: number) => Promise<void>;

const defaultSleep: SleepFn = (ms) => new Promise((r) => setTimeout(r, ms));

export interface SessionOptions {
  pollIntervalMs?: number;
  maxBackoffMs?: number;
  sleep?: SleepFn;
}

export interface SessionState {
  imageId: string | null;
  inversionId: string | null;
  steps: number;
  backend: string;
  segmentation: SegmentationResponse | null;
  regionSets: RegionSets;
  params: AnonymizeParams;
  lastResult: HistoryEntry | null;
  lastResultStale: boolean;
  jobInFlight: boolean;
  warning: string | null;
  fieldErrors: Partial<Record<keyof AnonymizeParams, string>>;
}

export class ConsoleSession {
  readonly state: SessionState;
  readonly history: HistoryEntry[] = [];
  private readonly sleep: SleepFn;
  private readonly pollIntervalMs: number;
  private readonly maxBackoffMs: number;

  constructor(private readonly api: ApiClient, options: SessionOptions = {}) {
    this.sleep = options.sleep ?? defaultSleep;
    this.pollIntervalMs = options.pollIntervalMs ?? 1000;
    this.maxBackoffMs = options.maxBackoffMs ?? 5000;
    this.state = {
      imageId: null,
      inversionId: null,
      steps: 100,
      backend: "toy-pointwise",
      segmentation: null,
      regionSets: { anonymize: [1, 2, 3, 4, 5, 6, 8], keep: [] },
      params: {
        lambda_id: 1.0, lambda_cfg: 10.0, lambda_img: 1.0,
        t_skip: 70, mask_start: 80, seed: 0,
      },
      lastResult: null,
      lastResultStale: false,
      jobInFlight: false,
      warning: null,
      fieldErrors: {},
    };
  }

  async uploadImage(payload: Uint8Array): Promise<string> {
    const res = await this.api.uploadImage(payload);
    this.state.imageId = res.image_id;
    this.state.inversionId = null;
    this.state.segmentation = null;
    return res.image_id;
  }

  async fetchSegmentation(): Promise<SegmentationResponse> {
    if (!this.state.imageId) throw new Error("upload an image first");
    const seg = await this.api.segmentation(this.state.imageId);
    this.state.segmentation = seg;
    return seg;
  }

  /** Toggle a region between the anonymize and keep sets. */
  toggleRegion(code: number): void {
    const sets = this.state.regionSets;
    if (sets.anonymize.includes(code)) {
      sets.anonymize = sets.anonymize.filter((c) => c !== code);
      sets.keep = [...sets.keep, code].sort((a, b) => a - b);
    } else if (sets.keep.includes(code)) {
      sets.keep = sets.keep.filter((c) => c !== code);
      sets.anonymize = [...sets.anonymize, code].sort((a, b) => a - b);
    }
    this.state.warning = sets.anonymize.length === 0
      ? "all regions kept: nothing to anonymize" : null;
  }

  /** The mask spec the next submission will send. */
  maskSpec(): MaskSpec {
    return matchPreset(this.state.regionSets);
  }

  private async pollUntilSettled(jobId: string): Promise<Job> {
    let interval = this.pollIntervalMs;
    for (;;) {
      const job = await this.api.job(jobId);
      if (job.state === "done" || job.state === "failed") return job;
      await this.sleep(interval);
      interval = Math.min(interval * 1.5, this.maxBackoffMs);
    }
  }

  async invert(params: { steps: number; seed: number; backend: string }): Promise<Job> {
    if (!this.state.imageId) throw new Error("upload an image first");
    const queued = await this.api.invert(this.state.imageId, params);
    const job = await this.pollUntilSettled(queued.id);
    if (job.state === "failed") throw new Error(job.error ?? "inversion failed");
    this.state.inversionId = job.result?.inversion_id ?? null;
    this.state.steps = params.steps;
    this.state.backend = params.backend;
    // clamp step-indexed knobs into the new range
    this.state.params.t_skip = Math.min(this.state.params.t_skip, params.steps);
    this.state.params.mask_start = Math.min(this.state.params.mask_start, params.steps);
    return job;
  }

  canSubmit(): { ok: boolean; reason?: string } {
    if (!this.state.inversionId) return { ok: false, reason: "no inversion yet" };
    if (this.state.jobInFlight) return { ok: false, reason: "a job is already running" };
    if (this.state.regionSets.anonymize.length === 0) {
      return { ok: false, reason: "all regions kept: nothing to anonymize" };
    }
    return { ok: true };
  }

  /**
   * Validate client-side, submit, poll to completion, append to history.
   * Out-of-range values never reach the server.
   */
  async submitAnonymize(params: AnonymizeParams,
                        mask: MaskSpec = this.maskSpec()): Promise<HistoryEntry> {
    const gate = this.canSubmit();
    if (!gate.ok) throw new Error(gate.reason);
    this.state.fieldErrors = {};
    const errors = validateParams(params, this.state.steps);
    if (errors.length > 0) {
      for (const err of errors) this.state.fieldErrors[err.field] = err.message;
      throw new Error(errors[0].message);
    }
    this.state.params = { ...params };
    this.state.jobInFlight = true;
    this.state.lastResultStale = true;
    try {
      const queued = await this.api.anonymize(this.state.inversionId!, params, mask,
                                              this.state.backend);
      const job = await this.pollUntilSettled(queued.id);
      if (job.state === "failed") throw new Error(job.error ?? "anonymize failed");
      const entry: HistoryEntry = {
        jobId: job.id,
        config: { ...params, mask },
        identityDistance: job.result?.identity_distance ?? null,
        imageUrl: job.result?.image_url
          ? this.api.resultImageUrl(job.result.image_url) : null,
        manifest: job.result?.manifest ?? null,
      };
      this.history.push(entry);
      this.state.lastResult = entry;
      return entry;
    } catch (err) {
      if (err instanceof ApiHttpError && err.status >= 400 && err.status < 500) {
        const field = fieldFromServerError(err.reason);
        if (field) this.state.fieldErrors[field] = err.reason;
      }
      throw err;
    } finally {
      this.state.jobInFlight = false;
      this.state.lastResultStale = false;
    }
  }

  /** RunManifest list for the whole session, replayable through the CLI. */
  exportManifests(): unknown[] {
    return this.history.map((entry) => entry.manifest).filter((m) => m !== null);
  }
}
