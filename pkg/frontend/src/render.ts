// Canvas rendering: schematic probe scene (grey live, red reference), the
// central image slice, and the rolling TIC with flash markers and steady
// badge. Pose correctness is the contract; looks are schematic on purpose.

import type { FrameMessage, Pose } from "./codec.js";
import { applyPose, type Vec3 } from "./geometry.js";
import { linearize } from "./quant.js";
import type { ConsoleState } from "./state.js";

const PROBE_OUTLINE: Array<[Vec3, Vec3]> = probeEdges();

function probeEdges(): Array<[Vec3, Vec3]> {
  // transducer head (flat box), handle, and the four-sphere tracking tree
  const head: Vec3[] = [
    [-15, -10, 0],
    [15, -10, 0],
    [15, 10, 0],
    [-15, 10, 0],
  ];
  const top: Vec3[] = head.map(([x, y]) => [x * 0.6, y * 0.6, -35] as Vec3);
  const edges: Array<[Vec3, Vec3]> = [];
  for (let i = 0; i < 4; i++) {
    edges.push([head[i], head[(i + 1) % 4]]);
    edges.push([top[i], top[(i + 1) % 4]]);
    edges.push([head[i], top[i]]);
  }
  const mast: Vec3 = [0, 0, -55];
  edges.push([[0, 0, -35], mast]);
  const spheres: Vec3[] = [
    [18, 0, -55],
    [-18, 0, -55],
    [0, 18, -55],
    [0, -14, -62],
  ];
  for (const s of spheres) {
    edges.push([mast, s]);
  }
  return edges;
}

function project(p: Vec3, width: number, height: number): [number, number] {
  // fixed oblique camera looking at the workspace origin
  const yaw = 0.6;
  const pitch = 0.45;
  const cx = Math.cos(yaw) * p[0] + Math.sin(yaw) * p[1];
  const cy = -Math.sin(yaw) * p[0] + Math.cos(yaw) * p[1];
  const cz = p[2];
  const ry = Math.cos(pitch) * cy + Math.sin(pitch) * cz;
  const rz = -Math.sin(pitch) * cy + Math.cos(pitch) * cz;
  const depth = 260 - rz;
  const scale = 1200 / Math.max(depth, 40);
  return [width / 2 + cx * scale, height / 2 - ry * scale];
}

function drawProbe(
  ctx: CanvasRenderingContext2D,
  pose: Pose,
  color: string,
  width: number,
  height: number
): void {
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  ctx.beginPath();
  for (const [a, b] of PROBE_OUTLINE) {
    const pa = project(applyPose(pose, a), width, height);
    const pb = project(applyPose(pose, b), width, height);
    ctx.moveTo(pa[0], pa[1]);
    ctx.lineTo(pb[0], pb[1]);
  }
  ctx.stroke();
}

export function drawScene(canvas: HTMLCanvasElement, state: ConsoleState): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    return;
  }
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#10151c";
  ctx.fillRect(0, 0, width, height);
  if (state.feedbackMode === "blind") {
    ctx.fillStyle = "#555";
    ctx.font = "16px sans-serif";
    ctx.fillText("blind mode: probe display hidden", 20, height / 2);
    return;
  }
  if (state.referencePose) {
    drawProbe(ctx, state.referencePose, "#e05555", width, height);
  }
  if (state.livePose) {
    drawProbe(ctx, state.livePose, state.stale ? "#6b6b6b" : "#c8cdd4", width, height);
  }
  if (state.stale) {
    ctx.fillStyle = "#e0a030";
    ctx.font = "14px sans-serif";
    ctx.fillText("tracking stale", 16, 24);
  }
}

export function drawSlice(canvas: HTMLCanvasElement, frame: FrameMessage | null, show: boolean): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    return;
  }
  ctx.fillStyle = "#000";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  if (!frame || !show) {
    return;
  }
  const [nx, ny, nz] = frame.dims;
  const k = Math.floor(nz / 2);
  const img = ctx.createImageData(nx, ny);
  for (let i = 0; i < nx; i++) {
    for (let j = 0; j < ny; j++) {
      const v = frame.voxels[(i * ny + j) * nz + k];
      const o = (j * nx + i) * 4;
      img.data[o] = v;
      img.data[o + 1] = v;
      img.data[o + 2] = v;
      img.data[o + 3] = 255;
    }
  }
  createImageBitmap(img).then((bitmap) => {
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(bitmap, 0, 0, canvas.width, canvas.height);
  });
}

export function drawTic(canvas: HTMLCanvasElement, state: ConsoleState): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    return;
  }
  const { width, height } = canvas;
  ctx.fillStyle = "#10151c";
  ctx.fillRect(0, 0, width, height);
  const { times, values } = state.tic;
  if (times.length < 2) {
    return;
  }
  const t0 = times[0];
  const t1 = times[times.length - 1];
  const vMax = Math.max(...values, linearize(255) * 0.05);
  const px = (t: number) => ((t - t0) / Math.max(t1 - t0, 1e-9)) * (width - 20) + 10;
  const py = (v: number) => height - 14 - (v / vMax) * (height - 28);

  ctx.strokeStyle = "#4da3ff";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(px(times[0]), py(values[0]));
  for (let i = 1; i < times.length; i++) {
    ctx.lineTo(px(times[i]), py(values[i]));
  }
  ctx.stroke();

  ctx.strokeStyle = "#ffcc44";
  ctx.lineWidth = 1;
  for (const tf of state.flashTimes) {
    if (tf >= t0 && tf <= t1) {
      ctx.beginPath();
      ctx.moveTo(px(tf), 10);
      ctx.lineTo(px(tf), height - 10);
      ctx.stroke();
    }
  }

  const badge = { steady: "#3dbd6d", ramping: "#e0a030", unknown: "#666" }[state.steady];
  ctx.fillStyle = badge;
  ctx.fillRect(width - 86, 8, 78, 20);
  ctx.fillStyle = "#10151c";
  ctx.font = "12px sans-serif";
  ctx.fillText(state.steady, width - 78, 22);
}
