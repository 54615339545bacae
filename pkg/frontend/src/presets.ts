/**
 * Region codes and preset algebra, mirroring the server exactly.
 *
 * The server exports the same structures as a canonical JSON fixture
 * (fixtures/presets.json); the parity test keeps both sides
 * byte-identical, so the overlay the console renders is provably the
 * mask the server will apply.
 */

export const CODES: Record<string, number> = {
  background: 0,
  skin: 1,
  left_eye: 2,
  right_eye: 3,
  nose: 4,
  mouth: 5,
  brows: 6,
  hair: 7,
  ears: 8,
};

/** Regions a whole-face preset anonymizes; hair and background never. */
export const FACE_REGIONS: readonly number[] = [1, 2, 3, 4, 5, 6, 8];

const EYES = [CODES.left_eye, CODES.right_eye];

export const PRESET_KEEP: Record<string, readonly number[]> = {
  "whole-face": [],
  "keep-eyes": EYES,
  "keep-mouth": [CODES.mouth],
  "keep-eyes-mouth": [...EYES, CODES.mouth],
  "keep-nose": [CODES.nose],
  "keep-nose-mouth": [CODES.nose, CODES.mouth],
  "keep-eyes-nose": [...EYES, CODES.nose],
};

export const PRESET_NAMES = Object.keys(PRESET_KEEP);

export interface RegionSets {
  anonymize: number[];
  keep: number[];
}

export function presetSets(name: string): RegionSets {
  const keep = PRESET_KEEP[name];
  if (keep === undefined) throw new Error(`unknown preset ${name}`);
  const keepSet = new Set(keep);
  return {
    anonymize: FACE_REGIONS.filter((c) => !keepSet.has(c)).sort((a, b) => a - b),
    keep: [...keep].sort((a, b) => a - b),
  };
}

/** The preset whose keep/anonymize sets match, if any. */
export function matchPreset(sets: RegionSets): string | null {
  const anon = [...sets.anonymize].sort((a, b) => a - b).join(",");
  const keep = [...sets.keep].sort((a, b) => a - b).join(",");
  for (const name of PRESET_NAMES) {
    const p = presetSets(name);
    if (p.anonymize.join(",") === anon && p.keep.join(",") === keep) return name;
  }
  return null;
}

type Json = null | boolean | number | string | Json[] | { [k: string]: Json };

function sortKeysDeep(value: Json): Json {
  if (Array.isArray(value)) return value.map(sortKeysDeep);
  if (value !== null && typeof value === "object") {
    const out: { [k: string]: Json } = {};
    for (const key of Object.keys(value).sort()) out[key] = sortKeysDeep(value[key]);
    return out;
  }
  return value;
}

/** Canonical JSON bytes: sorted keys, two-space indent, trailing newline. */
export function canonicalJsonBytes(value: Json): Uint8Array {
  return new TextEncoder().encode(JSON.stringify(sortKeysDeep(value), null, 2) + "\n");
}

/** Byte-identical counterpart of the server's preset fixture export. */
export function presetFixtureBytes(): Uint8Array {
  const presets: { [k: string]: Json } = {};
  for (const name of PRESET_NAMES) {
    const sets = presetSets(name);
    presets[name] = { anonymize: sets.anonymize, keep: sets.keep };
  }
  return canonicalJsonBytes({
    codes: CODES,
    face_regions: [...FACE_REGIONS],
    presets,
  });
}

/** Canonical export of one toggle configuration (for session export). */
export function exportRegionSets(sets: RegionSets): Uint8Array {
  return canonicalJsonBytes({
    anonymize: [...sets.anonymize].sort((a, b) => a - b),
    keep: [...sets.keep].sort((a, b) => a - b),
  });
}
