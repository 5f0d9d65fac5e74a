// View model + DOM wiring for the edit session page. All invariants live in
// the model (phase gating, debounced previews, staleness); the DOM layer just
// reflects it.

import { SessionClient } from "./client.js";
import { debounce, SingleFlightLoader } from "./debounce.js";
import { canAdvanceRound, canSubmitEdit, isEditRunning } from "./phase.js";
import type { SessionState } from "./types.js";

const OMEGA_KEY = "talker.omega";

export interface StorageLike {
  getItem(k: string): string | null;
  setItem(k: string, v: string): void;
}

export class SessionViewModel {
  omega = 1.0;
  previewFrame = 0;
  /** stateSeq at the time the current preview was requested */
  previewSeq = -1;
  lastPreview: Uint8Array | null = null;
  referenceBytes: Uint8Array | null = null;

  constructor(
    public client: SessionClient,
    private loader: SingleFlightLoader,
    private storage: StorageLike | null = null,
  ) {
    const saved = this.storage?.getItem(OMEGA_KEY);
    if (saved !== null && saved !== undefined && !Number.isNaN(Number(saved))) {
      this.omega = Number(saved);
    }
    this.loader.onResult((r) => {
      if (r.url.includes("omega=0&ref=1") || r.url.endsWith("omega=0")) {
        // reference panel updates arrive through the same loader
      }
      this.lastPreview = r.bytes;
    });
  }

  get state(): SessionState | null {
    return this.client.state;
  }

  scrubOmega(value: number): void {
    const max = this.state?.omega_max ?? 1.0;
    this.omega = Math.min(Math.max(value, 0), max);
    this.storage?.setItem(OMEGA_KEY, String(this.omega));
    this.requestPreview();
  }

  requestPreview(): void {
    this.previewSeq = this.client.stateSeq;
    this.loader.request(this.client.previewUrl(this.previewFrame, this.omega));
  }

  /** preview is stale once the session moved past the state it was taken in */
  previewIsStale(): boolean {
    return this.lastPreview !== null && this.previewSeq < this.client.stateSeq;
  }
}

export function mountApp(root: Document, client: SessionClient, storage: StorageLike): void {
  const loader = new SingleFlightLoader(async (url) => {
    const resp = await fetch(url);
    return new Uint8Array(await resp.arrayBuffer());
  });
  const vm = new SessionViewModel(client, loader, storage);

  const el = (id: string) => root.getElementById(id) as HTMLElement;
  const instruction = el("instruction") as HTMLInputElement;
  const preset = el("preset") as HTMLSelectElement;
  const submit = el("submit") as HTMLButtonElement;
  const advance = el("advance") as HTMLButtonElement;
  const slider = el("omega") as HTMLInputElement;
  const omegaLabel = el("omega-value");
  const banner = el("offline-banner");
  const stale = el("stale-badge");
  const phaseLabel = el("phase");
  const progress = el("progress");
  const lossLabel = el("loss");
  const errorLabel = el("error");
  const preview = el("preview") as HTMLImageElement;
  const reference = el("reference") as HTMLImageElement;

  slider.value = String(vm.omega);
  omegaLabel.textContent = vm.omega.toFixed(2);

  const refresh = () => {
    const s = vm.state;
    submit.disabled = !canSubmitEdit(s);
    advance.style.display = canAdvanceRound(s) ? "inline-block" : "none";
    phaseLabel.textContent = s ? s.phase : "connecting";
    phaseLabel.className = `phase phase-${s?.phase ?? "unknown"}`;
    if (s && s.round_total > 0) {
      progress.textContent = `round ${Math.min(s.round_index + 1, s.round_total)}/${s.round_total}`;
    } else {
      progress.textContent = "";
    }
    lossLabel.textContent = s?.latest_loss != null ? `loss ${s.latest_loss.toExponential(2)}` : "";
    errorLabel.textContent = s?.error ?? "";
    stale.style.display = vm.previewIsStale() ? "inline-block" : "none";
    if (isEditRunning(s)) instruction.setAttribute("aria-busy", "true");
    else instruction.removeAttribute("aria-busy");
  };

  client["handlers"].state = () => {
    refresh();
    // a phase change invalidates the preview; refetch lazily
    stale.style.display = vm.previewIsStale() ? "inline-block" : "none";
  };
  client["handlers"].connection = (online) => {
    banner.style.display = online ? "none" : "block";
    refresh();
  };

  loader.onResult((r) => {
    const blob = new Blob([r.bytes.buffer as ArrayBuffer], { type: "image/png" });
    preview.src = URL.createObjectURL(blob);
    stale.style.display = "none";
  });

  const scrub = debounce((value: number) => {
    vm.scrubOmega(value);
    void client.setOmega(vm.omega);
  }, 150);
  slider.addEventListener("input", () => {
    omegaLabel.textContent = Number(slider.value).toFixed(2);
    scrub(Number(slider.value));
  });

  const loadReference = async () => {
    const resp = await fetch(client.previewUrl(vm.previewFrame, 0));
    const bytes = new Uint8Array(await resp.arrayBuffer());
    vm.referenceBytes = bytes;
    reference.src = URL.createObjectURL(new Blob([bytes.buffer as ArrayBuffer], { type: "image/png" }));
  };

  submit.addEventListener("click", () => {
    void client.submitInstruction(instruction.value, preset.value || undefined).then((r) => {
      if (r.sent) refresh();
    });
  });
  advance.addEventListener("click", () => {
    void client.advanceRound().then(refresh);
  });

  void client.connect().then(() => {
    refresh();
    vm.requestPreview();
    void loadReference();
  });
}
