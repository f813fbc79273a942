// Console-side quantification: linearization, VOI means and the steady-state
// rule. Formulas intentionally match the analysis backend so the console
// works against any compliant stream; cross-language fixtures pin them.

import type { FrameMessage } from "./codec.js";

export function linearize(code: number, dynamicRangeDb = 60): number {
  return Math.pow(10, ((code / 255) * dynamicRangeDb - dynamicRangeDb) / 20);
}

export interface EllipsoidVoi {
  centerMm: [number, number, number];
  radiiMm: [number, number, number];
}

/**
 * Mean linearized intensity of the frame voxels inside the VOI. Voxel (i,j,k)
 * of a d-sized grid is centered at (index - (d-1)/2) * voxelSize, matching
 * the renderer's convention.
 */
export function ticSample(frame: FrameMessage, voi: EllipsoidVoi, dynamicRangeDb = 60): number | null {
  const [nx, ny, nz] = frame.dims;
  const [sx, sy, sz] = frame.voxelSize;
  const [cx, cy, cz] = voi.centerMm;
  const [rx, ry, rz] = voi.radiiMm;
  let sum = 0;
  let count = 0;
  let idx = 0;
  for (let i = 0; i < nx; i++) {
    const x = ((i - (nx - 1) / 2) * sx - cx) / rx;
    for (let j = 0; j < ny; j++) {
      const y = ((j - (ny - 1) / 2) * sy - cy) / ry;
      for (let k = 0; k < nz; k++, idx++) {
        const z = ((k - (nz - 1) / 2) * sz - cz) / rz;
        if (x * x + y * y + z * z <= 1) {
          sum += linearize(frame.voxels[idx], dynamicRangeDb);
          count += 1;
        }
      }
    }
  }
  return count === 0 ? null : sum / count;
}

export interface Tic {
  times: number[];
  values: number[];
}

export interface SteadyReport {
  reached: boolean;
  timeToSteady: number | null;
}

/**
 * Earliest time the least-squares slope over a trailing window, normalized by
 * the window mean, is within tolerance. Identical rule to the backend's
 * steady-state detector (the fixtures in tests/ are generated by it).
 */
export function detectSteadyState(tic: Tic, windowS = 20, slopeTolerance = 0.005): SteadyReport {
  const t = tic.times;
  const y = tic.values;
  if (t.length === 0 || t[t.length - 1] - t[0] < windowS) {
    return { reached: false, timeToSteady: null };
  }
  for (let i = 0; i < t.length; i++) {
    if (t[i] - t[0] < windowS) {
      continue;
    }
    let n = 0;
    let st = 0;
    let sy = 0;
    for (let j = 0; j <= i; j++) {
      if (t[j] >= t[i] - windowS) {
        n += 1;
        st += t[j];
        sy += y[j];
      }
    }
    if (n < 3) {
      continue;
    }
    const tMean = st / n;
    const yMean = sy / n;
    let num = 0;
    let den = 0;
    for (let j = 0; j <= i; j++) {
      if (t[j] >= t[i] - windowS) {
        num += (t[j] - tMean) * (y[j] - yMean);
        den += (t[j] - tMean) * (t[j] - tMean);
      }
    }
    const slope = num / den;
    if (Math.abs(slope) <= slopeTolerance * yMean) {
      return { reached: true, timeToSteady: t[i] };
    }
  }
  return { reached: false, timeToSteady: null };
}

export type SteadyStatus = "ramping" | "steady" | "unknown";

/** Indicator status for the rolling TIC since the last flash. */
export function steadyStatus(tic: Tic, windowS = 20, slopeTolerance = 0.005): SteadyStatus {
  if (tic.times.length < 3 || tic.times[tic.times.length - 1] - tic.times[0] < windowS) {
    return "unknown";
  }
  return detectSteadyState(tic, windowS, slopeTolerance).reached ? "steady" : "ramping";
}
