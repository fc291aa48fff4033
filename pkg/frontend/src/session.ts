/**
 * Console controller: one active screening session per tab. Holds the
 * mirror of the server-side session state plus form and panel state, and
 * serialises uploads so recordings arrive in order.
 *
 * The decision panel is populated exclusively from service responses;
 * no score or decision is ever derived locally.
 */

import {
  ApiError,
  Demographics,
  FieldErrors,
  ScoreResult,
  ScreeningApi,
  SegmentSummary,
} from "./api.js";
import { validateDemographics } from "./validation.js";

export const THRESHOLD_GRID = [0.36, 0.38, 0.4, 0.45, 0.5] as const;
export const DEFAULT_THRESHOLD = 0.38;
export const MIN_SESSIONS = 3;

export interface SweepPoint {
  tau: number;
  sensitivity: number;
  specificity: number;
}

export interface DecisionPanel {
  enabled: boolean;
  score: number | null;
  threshold: number;
  decision: "refer" | "no-refer" | null;
  tradeoffText: string;
}

export interface ConsoleView {
  sessionId: string | null;
  serverState: string;
  segments: SegmentSummary[];
  retryAdvisory: boolean;
  uploadsAccepted: number;
  minimumSessionsMet: boolean;
  formErrors: FieldErrors;
  statusMessage: string;
  decision: DecisionPanel;
}

export class ScreeningConsole {
  private view: ConsoleView;
  private uploadQueue: Promise<unknown> = Promise.resolve();

  constructor(
    private api: ScreeningApi,
    private sweep: SweepPoint[] = [],
  ) {
    this.view = {
      sessionId: null,
      serverState: "NoSession",
      segments: [],
      retryAdvisory: false,
      uploadsAccepted: 0,
      minimumSessionsMet: false,
      formErrors: {},
      statusMessage: "",
      decision: {
        enabled: false,
        score: null,
        threshold: DEFAULT_THRESHOLD,
        decision: null,
        tradeoffText: this.tradeoffFor(DEFAULT_THRESHOLD),
      },
    };
  }

  getView(): ConsoleView {
    return this.view;
  }

  async start(): Promise<void> {
    this.view.sessionId = await this.api.createSession();
    this.view.serverState = "Open";
  }

  /** Uploads are serialised: each waits for the previous one to settle. */
  uploadRecording(wavBytes: ArrayBuffer): Promise<void> {
    const next = this.uploadQueue.then(() => this.doUpload(wavBytes));
    this.uploadQueue = next.catch(() => undefined);
    return next;
  }

  private async doUpload(wavBytes: ArrayBuffer): Promise<void> {
    if (!this.view.sessionId) throw new Error("no active session");
    try {
      const result = await this.api.uploadRecording(
        this.view.sessionId,
        wavBytes,
      );
      this.view.serverState = result.state;
      if (result.advisory === "retry") {
        // no coughs detected: the session counter must not advance
        this.view.retryAdvisory = true;
        this.view.statusMessage =
          "No coughs detected in that recording. Please record again.";
        return;
      }
      this.view.retryAdvisory = false;
      this.view.segments = this.view.segments.concat(result.segments);
      this.view.uploadsAccepted += 1;
      this.view.minimumSessionsMet = this.view.uploadsAccepted >= MIN_SESSIONS;
      this.view.statusMessage = this.view.minimumSessionsMet
        ? "Minimum of 3 cough sessions met."
        : `Session ${this.view.uploadsAccepted} of ${MIN_SESSIONS} recorded.`;
    } catch (err) {
      if (err instanceof ApiError) {
        this.view.statusMessage =
          err.status === 400
            ? "The recording could not be read. Please retry."
            : "Upload failed. Please retry.";
        return;
      }
      this.view.statusMessage = "Upload failed. Please retry.";
    }
  }

  async submitDemographics(form: Partial<Demographics>): Promise<boolean> {
    const localErrors = validateDemographics(form);
    this.view.formErrors = localErrors;
    if (Object.keys(localErrors).length > 0) {
      return false; // invalid forms never reach the network
    }
    if (!this.view.sessionId) throw new Error("no active session");
    try {
      const result = await this.api.putDemographics(
        this.view.sessionId,
        form as Demographics,
      );
      this.view.serverState = result.state;
      this.view.formErrors = {};
      return true;
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        this.view.formErrors = err.detail as FieldErrors;
        return false;
      }
      this.view.statusMessage = "Could not save the form. Please retry.";
      return false; // network failure keeps the form editable
    }
  }

  /** Only validated operating points are selectable. */
  setThreshold(tau: number): void {
    if (!THRESHOLD_GRID.some((t) => t === tau)) {
      throw new Error(`threshold ${tau} is not a validated operating point`);
    }
    this.view.decision.threshold = tau;
    this.view.decision.tradeoffText = this.tradeoffFor(tau);
  }

  async requestScore(task: string = "tb_vs_rest"): Promise<ScoreResult | null> {
    if (!this.view.sessionId) throw new Error("no active session");
    try {
      const result = await this.api.score(
        this.view.sessionId,
        task,
        this.view.decision.threshold,
      );
      this.view.serverState = "Scored";
      this.view.decision = {
        enabled: true,
        score: result.score,
        threshold: result.threshold,
        decision: result.decision,
        tradeoffText: this.tradeoffFor(result.threshold),
      };
      return result;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.view.statusMessage =
          "Complete the previous steps before scoring.";
        return null;
      }
      throw err;
    }
  }

  private tradeoffFor(tau: number): string {
    const point = this.sweep.find((p) => Math.abs(p.tau - tau) < 1e-9);
    if (!point) return "";
    return (
      `At threshold ${tau.toFixed(2)}: sensitivity ` +
      `${(point.sensitivity * 100).toFixed(1)}%, specificity ` +
      `${(point.specificity * 100).toFixed(1)}%.`
    );
  }
}
