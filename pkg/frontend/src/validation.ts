/**
 * Client-side parameter validation; out-of-range values never reach the
 * server. Slider ranges bracket the studied settings with headroom:
 * lambda_id in [0, 2], lambda_cfg in [0, 20], step indices in [0, T].
 */

import type { AnonymizeParams } from "./types.js";

export interface Range {
  min: number;
  max: number;
  integer: boolean;
}

export function ranges(steps: number): Record<keyof AnonymizeParams, Range> {
  return {
    lambda_id: { min: 0, max: 2, integer: false },
    lambda_cfg: { min: 0, max: 20, integer: false },
    lambda_img: { min: 0, max: 4, integer: false },
    t_skip: { min: 0, max: steps, integer: true },
    mask_start: { min: 0, max: steps, integer: true },
    seed: { min: 0, max: Number.MAX_SAFE_INTEGER, integer: true },
  };
}

export interface FieldError {
  field: keyof AnonymizeParams;
  message: string;
}

export function validateParams(params: AnonymizeParams, steps: number): FieldError[] {
  const errors: FieldError[] = [];
  const table = ranges(steps);
  for (const field of Object.keys(table) as (keyof AnonymizeParams)[]) {
    const value = params[field];
    const r = table[field];
    if (!Number.isFinite(value)) {
      errors.push({ field, message: `${field} must be a finite number` });
      continue;
    }
    if (r.integer && !Number.isInteger(value)) {
      errors.push({ field, message: `${field} must be an integer` });
      continue;
    }
    if (value < r.min || value > r.max) {
      errors.push({ field, message: `${field} must be within [${r.min}, ${r.max}]` });
    }
  }
  return errors;
}

/** Best-effort mapping of a server 4xx message onto the offending field. */
export function fieldFromServerError(message: string): keyof AnonymizeParams | null {
  const fields: (keyof AnonymizeParams)[] = [
    "lambda_id", "lambda_cfg", "lambda_img", "t_skip", "mask_start", "seed",
  ];
  for (const field of fields) {
    if (message.includes(field)) return field;
  }
  return null;
}
