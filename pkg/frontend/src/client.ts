// WebSocket client: sends protocol messages, surfaces parsed server
// messages and connection state to the app.

import { ClientMessage, PROTOCOL_VERSION, ServerMessage } from "./protocol.js";

export class LiveClient {
  private socket: WebSocket | null = null;
  onMessage: (msg: ServerMessage) => void = () => {};
  onStatus: (connected: boolean, detail: string) => void = () => {};

  connect(url: string) {
    this.close();
    const socket = new WebSocket(url);
    this.socket = socket;
    socket.addEventListener("open", () => {
      this.onStatus(true, `connected to ${url}`);
      this.send({ type: "hello", protocol_version: PROTOCOL_VERSION });
    });
    socket.addEventListener("message", (event) => {
      this.onMessage(JSON.parse(event.data as string) as ServerMessage);
    });
    socket.addEventListener("close", () => {
      this.onStatus(false, "connection lost - reconnect to resume");
    });
    socket.addEventListener("error", () => {
      this.onStatus(false, "connection error");
    });
  }

  get connected(): boolean {
    return this.socket !== null && this.socket.readyState === WebSocket.OPEN;
  }

  send(msg: ClientMessage) {
    if (this.connected) this.socket!.send(JSON.stringify(msg));
  }

  close() {
    if (this.socket) {
      this.socket.close();
      this.socket = null;
    }
  }
}
