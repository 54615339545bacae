import { describe, expect, it } from "vitest";

import { fieldFromServerError, ranges, validateParams } from "../src/validation.js";
import type { AnonymizeParams } from "../src/types.js";

const good: AnonymizeParams = {
  lambda_id: 1.0, lambda_cfg: 10.0, lambda_img: 1.0,
  t_skip: 70, mask_start: 80, seed: 0,
};

describe("client-side validation", () => {
  it("accepts the reference settings", () => {
    expect(validateParams(good, 100)).toEqual([]);
  });

  it("slider ranges bracket the studied values", () => {
    const r = ranges(100);
    expect(r.lambda_id).toEqual({ min: 0, max: 2, integer: false });
    expect(r.lambda_cfg).toEqual({ min: 0, max: 20, integer: false });
    expect(r.t_skip.max).toBe(100);
    expect(r.mask_start.max).toBe(100);
  });

  it.each([
    ["lambda_id", 2.5], ["lambda_id", -0.1],
    ["lambda_cfg", 21], ["lambda_cfg", -1],
    ["t_skip", 101], ["t_skip", -1],
    ["mask_start", 101],
    ["seed", -3],
  ] as const)("rejects %s = %d", (field, value) => {
    const params = { ...good, [field]: value };
    const errors = validateParams(params, 100);
    expect(errors.map((e) => e.field)).toContain(field);
  });

  it("rejects non-integer step indices and non-finite values", () => {
    expect(validateParams({ ...good, t_skip: 1.5 }, 100)).not.toEqual([]);
    expect(validateParams({ ...good, lambda_cfg: NaN }, 100)).not.toEqual([]);
  });

  it("maps server messages back onto fields", () => {
    expect(fieldFromServerError("t_skip must be in [0, 100]")).toBe("t_skip");
    expect(fieldFromServerError("lambda_id and lambda_img must be >= 0"))
      .toBe("lambda_id");
    expect(fieldFromServerError("unrelated message")).toBeNull();
  });
});
