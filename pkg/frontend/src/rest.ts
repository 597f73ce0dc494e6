/**
 * Typed wrappers over the session service's HTTP endpoints.
 */

import {
  episodeSchema,
  rolloutResultSchema,
  sceneSchema,
  type EpisodeRecord,
  type RolloutResult,
  type SceneDescription,
} from "./protocol.js";

export interface RestClientOptions {
  baseUrl: string;
  fetchImpl?: typeof fetch;
}

export interface RolloutRequest {
  family: string;
  ood?: string;
  seed?: number;
  mode?: string;
  policy?: string;
  style?: string;
  max_steps?: number;
  prompts?: Array<{ frame: number; prompt: unknown }>;
}

export class RestError extends Error {
  constructor(
    readonly status: number,
    readonly body: string,
  ) {
    super(`HTTP ${status}: ${body}`);
  }
}

export class RestClient {
  private readonly baseUrl: string;
  private readonly fetchImpl: typeof fetch;

  constructor(options: RestClientOptions) {
    this.baseUrl = options.baseUrl.replace(/\/$/, "");
    this.fetchImpl = options.fetchImpl ?? fetch;
  }

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    const text = await response.text();
    if (!response.ok) throw new RestError(response.status, text);
    return JSON.parse(text);
  }

  async health(): Promise<boolean> {
    try {
      const body = (await this.request("/health")) as { ok?: boolean };
      return body.ok === true;
    } catch {
      return false;
    }
  }

  async scene(family: string, ood: string, seed: number): Promise<SceneDescription> {
    const query = new URLSearchParams({ family, ood, seed: String(seed) });
    return sceneSchema.parse(await this.request(`/scene?${query}`));
  }

  async episode(episodeId: string, stride = 1): Promise<EpisodeRecord> {
    const query = stride > 1 ? `?stride=${stride}` : "";
    return episodeSchema.parse(await this.request(`/episodes/${episodeId}${query}`));
  }

  async rollout(body: RolloutRequest): Promise<RolloutResult> {
    const raw = await this.request("/rollout", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return rolloutResultSchema.parse(raw);
  }
}
