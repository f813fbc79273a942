// WebSocket client for the session stream: binary messages down, binary
// control messages up, exponential-backoff reconnect.

import type { ControlMessage, Message } from "./codec.js";
import { StreamDecoder, encodeMessage } from "./codec.js";
import type { Connection } from "./state.js";

export interface SessionInfo {
  id: string;
  tcp_port: number;
  config_digest: string;
  feedback_mode: string;
  flash_times_s: number[];
  n_subscribers: number;
  messages_published: number;
  finished: boolean;
  voi: { center_mm: number[]; radii_mm: number[] } | null;
  dynamic_range_db: number;
  steady_window_s: number;
  steady_slope_tolerance: number;
}

export async function listSessions(baseUrl: string): Promise<SessionInfo[]> {
  const response = await fetch(`${baseUrl}/sessions`);
  if (!response.ok) {
    throw new Error(`GET /sessions failed: ${response.status}`);
  }
  return (await response.json()) as SessionInfo[];
}

export class SessionClient {
  private ws: WebSocket | null = null;
  private decoder = new StreamDecoder();
  private backoffMs = 500;
  private closed = false;

  constructor(
    private url: string,
    private onMessage: (msg: Message) => void,
    private onConnection: (state: Connection) => void
  ) {}

  connect(): void {
    this.ws = new WebSocket(this.url);
    this.ws.binaryType = "arraybuffer";
    this.ws.onopen = () => {
      this.backoffMs = 500;
      this.onConnection("connected");
    };
    this.ws.onmessage = (event: MessageEvent) => {
      const chunk = new Uint8Array(event.data as ArrayBuffer);
      for (const msg of this.decoder.feed(chunk)) {
        this.onMessage(msg);
      }
    };
    this.ws.onclose = () => {
      if (this.closed) {
        this.onConnection("closed");
        return;
      }
      this.onConnection("reconnecting");
      setTimeout(() => this.connect(), this.backoffMs);
      this.backoffMs = Math.min(this.backoffMs * 2, 10_000);
    };
    this.ws.onerror = () => {
      this.ws?.close();
    };
  }

  sendControl(event: string, params: Array<[string, string]> = []): void {
    if (!this.ws || this.ws.readyState !== WebSocket.OPEN) {
      return;
    }
    const msg: ControlMessage = { kind: "control", timestampUs: 0, event, params };
    this.ws.send(encodeMessage(msg));
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }
}
