import { SessionClient } from "./client.js";
import { mountApp } from "./view.js";

const base = window.location.origin;
const client = new SessionClient(
  base,
  (url, init) => fetch(url, init),
  (url) => new EventSource(url) as unknown as import("./client.js").EventSourceLike,
);

mountApp(document, client, window.sessionStorage);
