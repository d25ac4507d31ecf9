/** Keyboard steering: held keys integrate into a camera pose at a fixed
 * tick rate, and each tick emits a pose message with want_frame set.
 *
 * W/S (or arrows) move along the heading, A/D strafe, Q/E turn,
 * R/F tilt, Shift sprints. The message's velocity fields are the actual
 * world-frame displacement rate, which is what the server's prefetcher
 * projects forward.
 */

import type { PoseMessage } from "./types.js";

export interface SteeringConfig {
  tickHz: number; // pose emission rate; keep >= 10 so prefetch sees motion early
  speed: number; // m/s
  sprintSpeed: number; // m/s with Shift held
  yawRate: number; // rad/s
  pitchRate: number; // rad/s
  z: number; // camera height, constant
}

export const DEFAULT_STEERING: SteeringConfig = {
  tickHz: 20,
  speed: 0.5,
  sprintSpeed: 2.5,
  yawRate: 1.6,
  pitchRate: 0.9,
  z: 1.1,
};

export interface Pose {
  x: number;
  y: number;
  z: number;
  yaw: number;
  pitch: number;
}

export class KeyboardSteering {
  pose: Pose;
  private held = new Set<string>();
  private t = 0;
  private timer: ReturnType<typeof setInterval> | null = null;
  private emitters: Array<(msg: PoseMessage) => void> = [];

  constructor(
    private readonly config: SteeringConfig = DEFAULT_STEERING,
    start: Partial<Pose> = {},
  ) {
    this.pose = { x: 0, y: 0, z: config.z, yaw: 0, pitch: 0, ...start };
  }

  onPose(emit: (msg: PoseMessage) => void): void {
    this.emitters.push(emit);
  }

  keyDown(key: string): void {
    this.held.add(normalizeKey(key));
  }

  keyUp(key: string): void {
    this.held.delete(normalizeKey(key));
  }

  /** Programmatic jump (e.g. grid double-click); zeroes velocity. */
  jumpTo(x: number, y: number): void {
    this.pose.x = x;
    this.pose.y = y;
  }

  start(): void {
    if (this.timer !== null) return;
    this.timer = setInterval(() => this.tick(1 / this.config.tickHz), 1000 / this.config.tickHz);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** One integration step; exposed so tests can drive time directly. */
  tick(dt: number): PoseMessage {
    const c = this.config;
    const speed = this.held.has("shift") ? c.sprintSpeed : c.speed;
    let forward = 0;
    let strafe = 0;
    if (this.held.has("w") || this.held.has("arrowup")) forward += 1;
    if (this.held.has("s") || this.held.has("arrowdown")) forward -= 1;
    if (this.held.has("a") || this.held.has("arrowleft")) strafe += 1; // +y is left
    if (this.held.has("d") || this.held.has("arrowright")) strafe -= 1;
    if (this.held.has("q")) this.pose.yaw += c.yawRate * dt;
    if (this.held.has("e")) this.pose.yaw -= c.yawRate * dt;
    if (this.held.has("r")) this.pose.pitch = Math.max(this.pose.pitch - c.pitchRate * dt, -1.4);
    if (this.held.has("f")) this.pose.pitch = Math.min(this.pose.pitch + c.pitchRate * dt, 1.4);

    const norm = Math.hypot(forward, strafe) || 1;
    const vAlong = (forward / norm) * speed;
    const vSide = (strafe / norm) * speed;
    const cos = Math.cos(this.pose.yaw);
    const sin = Math.sin(this.pose.yaw);
    // forward is (cos yaw, sin yaw); left is (-sin yaw, cos yaw)
    const vx = vAlong * cos - vSide * sin;
    const vy = vAlong * sin + vSide * cos;
    this.pose.x += vx * dt;
    this.pose.y += vy * dt;
    this.t += dt;

    const msg: PoseMessage = {
      t: this.t,
      x: this.pose.x,
      y: this.pose.y,
      z: this.pose.z,
      yaw: this.pose.yaw,
      pitch: this.pose.pitch,
      roll: 0,
      vx,
      vy,
      want_frame: true,
    };
    for (const e of this.emitters) e(msg);
    return msg;
  }
}

function normalizeKey(key: string): string {
  return key.length === 1 ? key.toLowerCase() : key.toLowerCase();
}
