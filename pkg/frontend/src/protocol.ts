/**
 * Wire types for the session service, validated with zod.
 *
 * Every message crossing the WebSocket or REST boundary is parsed through
 * these schemas before the console touches it, so protocol drift surfaces
 * as a loud validation error instead of a silent rendering bug.
 */

import { z } from "zod";

export const PROTOCOL_VERSION = 1;

/** Base64-encoded RGB8 raster with its dimensions. */
export const rasterSchema = z.object({
  width: z.number().int().positive(),
  height: z.number().int().positive(),
  rgb8: z.string(),
});
export type Raster = z.infer<typeof rasterSchema>;

/** Symbolic prompt geometry: anchor point and/or inclusive pixel box. */
export const promptSchema = z.object({
  anchor: z.tuple([z.number(), z.number()]).nullable(),
  box: z.tuple([z.number(), z.number(), z.number(), z.number()]).nullable(),
  style: z.enum(["crosshair", "point"]),
  render_both: z.boolean(),
});
export type PromptGeometry = z.infer<typeof promptSchema>;

export const gripperSchema = z.object({
  x: z.number(),
  y: z.number(),
  closed: z.boolean(),
  held_object: z.number().int().nullable(),
});
export type Gripper = z.infer<typeof gripperSchema>;

export const helloSchema = z.object({
  type: z.literal("hello"),
  protocol_version: z.number().int(),
  service: z.literal("visteer"),
});

export const ackSchema = z
  .object({
    type: z.literal("ack"),
    cmd_id: z.union([z.string(), z.number()]).optional(),
    ok: z.boolean(),
  })
  .passthrough();
export type Ack = z.infer<typeof ackSchema>;

export const frameSchema = z.object({
  type: z.literal("frame"),
  session: z.string(),
  frame_index: z.number().int(),
  obs: rasterSchema,
  prompt: promptSchema.nullable(),
  prompt_raster: rasterSchema.nullable(),
  gripper: gripperSchema,
  subtask: z.string().nullable(),
  event: z.boolean(),
  is_key_frame: z.boolean(),
});
export type FrameMsg = z.infer<typeof frameSchema>;

export const snapshotSchema = z.object({
  type: z.literal("snapshot"),
  session: z.string(),
  frame_index: z.number().int(),
  status: z.string(),
  mode: z.string(),
  obs: rasterSchema,
  prompt: promptSchema.nullable(),
  prompt_raster: rasterSchema.nullable(),
  gripper: gripperSchema,
  subtask: z.string().nullable(),
  instruction: z.string(),
  family: z.string(),
});
export type SnapshotMsg = z.infer<typeof snapshotSchema>;

export const eventFiredSchema = z.object({
  type: z.literal("event_fired"),
  session: z.string(),
  frame_index: z.number().int(),
  phi_before: z.number(),
  phi_after: z.number(),
  kind: z.enum(["grasp", "release"]),
});
export type EventFiredMsg = z.infer<typeof eventFiredSchema>;

export const subtaskChangedSchema = z.object({
  type: z.literal("subtask_changed"),
  session: z.string(),
  frame_index: z.number().int(),
  subtask_index: z.number().int(),
  subtask: z.string().nullable(),
});
export type SubtaskChangedMsg = z.infer<typeof subtaskChangedSchema>;

export const doneSchema = z.object({
  type: z.literal("done"),
  session: z.string(),
  frames: z.number().int(),
  success: z.boolean(),
  score: z.number(),
  step_cap_hit: z.boolean(),
});
export type DoneMsg = z.infer<typeof doneSchema>;

export const serverMessageSchema = z.discriminatedUnion("type", [
  helloSchema,
  ackSchema.extend({ type: z.literal("ack") }),
  frameSchema,
  snapshotSchema,
  eventFiredSchema,
  subtaskChangedSchema,
  doneSchema,
]);
export type ServerMessage = z.infer<typeof serverMessageSchema>;

export function parseServerMessage(text: string): ServerMessage {
  return serverMessageSchema.parse(JSON.parse(text));
}

// ---- REST payloads ------------------------------------------------------

export const sceneSchema = z.object({
  family: z.string(),
  instruction: z.string(),
  target_object_id: z.number().int().nullable(),
  target_key: z.string().nullable(),
  target_box: z.tuple([z.number(), z.number(), z.number(), z.number()]).nullable(),
  target_cell: z.tuple([z.number(), z.number()]).nullable(),
  width: z.number().int(),
  height: z.number().int(),
  gt_boxes: z.record(
    z.string(),
    z.tuple([z.number(), z.number(), z.number(), z.number()]),
  ),
  gripper_px: z.tuple([z.number(), z.number()]),
});
export type Scene = z.infer<typeof sceneSchema>;

export const storedPromptSchema = z.object({
  created_frame: z.number().int(),
  prompt: promptSchema,
});

export const episodeSchema = z.object({
  episode_id: z.string(),
  family: z.string(),
  instruction: z.string(),
  frames: z.number().int(),
  width: z.number().int(),
  height: z.number().int(),
  events: z.array(z.number().int()),
  key_frames: z.array(z.number().int()),
  prompt_ids: z.array(z.number().int()),
  prompts: z.array(storedPromptSchema),
  grounding: z.array(z.unknown()),
  obs: z.array(rasterSchema),
  success: z.boolean(),
});
export type StoredEpisode = z.infer<typeof episodeSchema>;

export const rolloutResultSchema = z
  .object({
    frames: z.number().int(),
    success: z.boolean(),
    score_exact: z.string(),
    actions: z.array(z.tuple([z.number(), z.number(), z.number()])),
    prompts: z.array(storedPromptSchema),
  })
  .passthrough();
export type RolloutResult = z.infer<typeof rolloutResultSchema>;

/** Decode a base64 RGB8 raster into bytes (length width*height*3). */
export function rasterBytes(raster: Raster): Uint8Array {
  const bin = atob(raster.rgb8);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  if (out.length !== raster.width * raster.height * 3) {
    throw new Error(
      `raster payload ${out.length} bytes, expected ${raster.width * raster.height * 3}`,
    );
  }
  return out;
}
