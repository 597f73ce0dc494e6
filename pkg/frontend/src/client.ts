/**
 * WebSocket session client.
 *
 * One socket carries both command acks and streamed session events. Acks
 * are correlated back to their promises by cmd_id; everything else is
 * fanned out to stream listeners in arrival order, so callers see frames,
 * snapshots, events, and done markers exactly as the service emitted them.
 */

import {
  parseServerMessage,
  type AckMessage,
  type HelloMessage,
  type ServerMessage,
} from "./protocol.js";

/** Browser WebSocket and the "ws" package both satisfy this surface. */
export interface WebSocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type StreamMessage = Exclude<ServerMessage, AckMessage | HelloMessage>;
export type StreamListener = (msg: StreamMessage) => void;

export class CommandError extends Error {
  constructor(
    readonly ack: AckMessage,
    readonly cmd: string,
  ) {
    super(`${cmd} failed: ${String(ack.error ?? "unknown")} (${String(ack.reason ?? "")})`);
  }
}

interface PendingAck {
  resolve: (ack: AckMessage) => void;
  reject: (err: Error) => void;
  timer: ReturnType<typeof setTimeout>;
}

export interface CreateFields {
  family: string;
  ood?: string;
  seed?: number;
  policy?: string;
  mode?: string;
  style?: string;
  record_every?: number;
  max_steps?: number;
  frame_period?: number;
}

export class SessionClient {
  private nextCmdId = 1;
  private readonly pending = new Map<number, PendingAck>();
  private readonly listeners = new Set<StreamListener>();
  private closed = false;
  hello: HelloMessage | null = null;

  private constructor(
    private readonly ws: WebSocketLike,
    private readonly commandTimeoutMs: number,
  ) {}

  /** Open the channel and wait for the service hello. */
  static connect(ws: WebSocketLike, commandTimeoutMs = 10_000): Promise<SessionClient> {
    const client = new SessionClient(ws, commandTimeoutMs);
    return new Promise((resolve, reject) => {
      const fail = (why: string) => {
        if (!client.hello) reject(new Error(why));
      };
      ws.onerror = () => fail("websocket error before hello");
      ws.onclose = () => {
        client.failAllPending("connection closed");
        fail("websocket closed before hello");
      };
      ws.onmessage = (ev) => {
        const msg = parseServerMessage(asText(ev.data));
        if (msg.type === "hello") {
          client.hello = msg;
          resolve(client);
          return;
        }
        client.dispatch(msg);
      };
    });
  }

  private dispatch(msg: ServerMessage): void {
    if (msg.type === "hello") return;
    if (msg.type === "ack") {
      const id = typeof msg.cmd_id === "number" ? msg.cmd_id : Number(msg.cmd_id);
      const pending = this.pending.get(id);
      if (pending) {
        this.pending.delete(id);
        clearTimeout(pending.timer);
        pending.resolve(msg);
      }
      return;
    }
    for (const listener of this.listeners) listener(msg);
  }

  private failAllPending(why: string): void {
    for (const [, pending] of this.pending) {
      clearTimeout(pending.timer);
      pending.reject(new Error(why));
    }
    this.pending.clear();
  }

  onStream(listener: StreamListener): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  /** Send a raw command and resolve with its ack, ok or not. */
  command(cmd: string, fields: Record<string, unknown> = {}): Promise<AckMessage> {
    if (this.closed) return Promise.reject(new Error("client closed"));
    const cmd_id = this.nextCmdId++;
    const payload = JSON.stringify({ cmd, cmd_id, ...fields });
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => {
        this.pending.delete(cmd_id);
        reject(new Error(`${cmd} ack timed out after ${this.commandTimeoutMs} ms`));
      }, this.commandTimeoutMs);
      this.pending.set(cmd_id, { resolve, reject, timer });
      this.ws.send(payload);
    });
  }

  /** Send a command and throw CommandError unless the ack reports ok. */
  private async expect(cmd: string, fields: Record<string, unknown> = {}): Promise<AckMessage> {
    const ack = await this.command(cmd, fields);
    if (!ack.ok) throw new CommandError(ack, cmd);
    return ack;
  }

  async create(fields: CreateFields): Promise<{ session: string; status: string }> {
    const ack = await this.expect("create", { ...fields });
    return { session: String(ack.session), status: String(ack.status) };
  }

  async subscribe(session: string): Promise<void> {
    await this.expect("subscribe", { session });
  }

  async start(session: string): Promise<void> {
    await this.expect("start", { session });
  }

  async pause(session: string): Promise<void> {
    await this.expect("pause", { session });
  }

  /** Advance a paused session; resolves with the newest frame index. */
  async step(session: string, count = 1): Promise<number> {
    const ack = await this.expect("step", { session, count });
    return Number(ack.frame_index);
  }

  /** Returns the frame index from which the prompt takes effect. */
  async submitPrompt(session: string, prompt: unknown): Promise<number> {
    const ack = await this.expect("submit_prompt", { session, prompt });
    return Number(ack.applies_from_frame);
  }

  async bindPolicy(session: string, policy: string): Promise<void> {
    await this.expect("bind_policy", { session, policy });
  }

  async closeSession(session: string): Promise<void> {
    await this.expect("close", { session });
  }

  async ping(): Promise<void> {
    await this.expect("ping");
  }

  close(): void {
    this.closed = true;
    this.failAllPending("client closed");
    this.ws.close();
  }
}

function asText(data: unknown): string {
  if (typeof data === "string") return data;
  if (data instanceof Uint8Array) return new TextDecoder().decode(data);
  return String(data);
}

/**
 * Buffers stream messages so tests and drivers can await them without
 * racing the socket. Attach before the first step so nothing is missed.
 */
export class StreamQueue {
  private readonly buffer: StreamMessage[] = [];
  private waiter: { resolve: (msg: StreamMessage) => void } | null = null;
  private readonly detach: () => void;

  constructor(client: SessionClient, filter?: (msg: StreamMessage) => boolean) {
    this.detach = client.onStream((msg) => {
      if (filter && !filter(msg)) return;
      if (this.waiter) {
        const { resolve } = this.waiter;
        this.waiter = null;
        resolve(msg);
      } else {
        this.buffer.push(msg);
      }
    });
  }

  take(timeoutMs = 10_000): Promise<StreamMessage> {
    const queued = this.buffer.shift();
    if (queued) return Promise.resolve(queued);
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => {
        this.waiter = null;
        reject(new Error(`no stream message within ${timeoutMs} ms`));
      }, timeoutMs);
      this.waiter = {
        resolve: (msg) => {
          clearTimeout(timer);
          resolve(msg);
        },
      };
    });
  }

  /** Drain messages until one satisfies the predicate; returns it. */
  async until(
    pred: (msg: StreamMessage) => boolean,
    timeoutMs = 10_000,
  ): Promise<StreamMessage> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const remaining = deadline - Date.now();
      if (remaining <= 0) throw new Error("predicate not satisfied in time");
      const msg = await this.take(remaining);
      if (pred(msg)) return msg;
    }
  }

  get pendingCount(): number {
    return this.buffer.length;
  }

  close(): void {
    this.detach();
  }
}
