// Run status polling for the header panel.

import type { RunStatus } from "./types";
import type { ApiClient } from "./api";

export type StatusListener = (status: RunStatus) => void;

export class StatusPoller {
  private timer: ReturnType<typeof setInterval> | null = null;
  private listeners: StatusListener[] = [];

  constructor(
    private readonly client: ApiClient,
    private readonly intervalMs = 2000,
  ) {}

  subscribe(listener: StatusListener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  async pollOnce(): Promise<RunStatus> {
    const status = await this.client.getStatus();
    for (const listener of this.listeners) listener(status);
    return status;
  }

  start(): void {
    if (this.timer !== null) return;
    void this.pollOnce().catch(() => undefined);
    this.timer = setInterval(() => {
      void this.pollOnce().catch(() => undefined);
    }, this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }
}

export function describePools(status: RunStatus): string {
  const parts = Object.entries(status.pools)
    .sort(([a], [b]) => a.localeCompare(b))
    .map(([pool, count]) => `${pool}: ${count}`);
  return `iteration ${status.iteration} (${status.phase}) | ${parts.join(" | ")}`;
}
