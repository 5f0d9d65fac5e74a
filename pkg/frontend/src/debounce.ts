// Debounced single-flight preview loading: rapid slider scrubs collapse to
// the trailing value and at most one fetch is ever in flight.

export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  delayMs: number,
  setTimer = globalThis.setTimeout,
  clearTimer = globalThis.clearTimeout,
): (...args: A) => void {
  let handle: ReturnType<typeof setTimeout> | undefined;
  return (...args: A) => {
    if (handle !== undefined) clearTimer(handle);
    handle = setTimer(() => {
      handle = undefined;
      fn(...args);
    }, delayMs);
  };
}

export type FetchBytes = (url: string) => Promise<Uint8Array>;

export interface PreviewResult {
  url: string;
  bytes: Uint8Array;
}

/** Serializes preview fetches: while one is in flight, only the latest
 * requested URL is remembered and fetched afterwards. */
export class SingleFlightLoader {
  private inFlight = false;
  private pending: string | null = null;
  private listeners: Array<(r: PreviewResult) => void> = [];
  inFlightCount = 0;
  maxObservedInFlight = 0;

  constructor(private fetchBytes: FetchBytes) {}

  onResult(fn: (r: PreviewResult) => void): void {
    this.listeners.push(fn);
  }

  request(url: string): void {
    if (this.inFlight) {
      this.pending = url;
      return;
    }
    void this.run(url);
  }

  private async run(url: string): Promise<void> {
    this.inFlight = true;
    this.inFlightCount += 1;
    this.maxObservedInFlight = Math.max(this.maxObservedInFlight, this.inFlightCount);
    try {
      const bytes = await this.fetchBytes(url);
      for (const fn of this.listeners) fn({ url, bytes });
    } catch (err) {
      console.warn("preview fetch failed:", err);
    } finally {
      this.inFlightCount -= 1;
      this.inFlight = false;
      const next = this.pending;
      this.pending = null;
      if (next !== null) void this.run(next);
    }
  }
}
