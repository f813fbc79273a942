// Minimal pose math: just enough to place probes and read displacements.

import type { Pose } from "./codec.js";

export type Vec3 = [number, number, number];

export function rotate(q: [number, number, number, number], v: Vec3): Vec3 {
  const [w, x, y, z] = q;
  // v' = v + 2 q_vec x (q_vec x v + w v)
  const ux = y * v[2] - z * v[1] + w * v[0];
  const uy = z * v[0] - x * v[2] + w * v[1];
  const uz = x * v[1] - y * v[0] + w * v[2];
  return [
    v[0] + 2 * (y * uz - z * uy),
    v[1] + 2 * (z * ux - x * uz),
    v[2] + 2 * (x * uy - y * ux),
  ];
}

export function applyPose(pose: Pose, v: Vec3): Vec3 {
  const r = rotate(pose.quaternion, v);
  return [
    r[0] + pose.translation[0],
    r[1] + pose.translation[1],
    r[2] + pose.translation[2],
  ];
}

/**
 * Distance between a tracked image point under two poses, the same formula
 * the analysis side uses for displacement traces: || T_live c - T_ref c ||.
 */
export function displacementMm(live: Pose, reference: Pose, centerOffset: Vec3 = [0, 0, 0]): number {
  const a = applyPose(live, centerOffset);
  const b = applyPose(reference, centerOffset);
  return Math.hypot(a[0] - b[0], a[1] - b[1], a[2] - b[2]);
}
