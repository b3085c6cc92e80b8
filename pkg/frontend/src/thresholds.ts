/** Threshold controls: fold-change / p-value form state for the test stage.
 *
 * A submit issues exactly one PUT. On success the artifacts listed in the
 * response's `invalidated` field are refetched (nothing is refetched when the
 * engine reports no invalidation, e.g. on identical resubmission). On engine
 * rejection the local form rolls back to the last committed state.
 */

import { ApiClient, Payload, ServiceError } from "./api";

export interface TestParams {
  comparison: [string, string];
  method: string;
  paired?: boolean;
  equal_variance?: boolean;
  fc_threshold: number;
  p_threshold: number;
  use_adjusted: boolean;
  include_exclusives?: boolean;
  min_valid?: number;
}

export interface DiffRow {
  protein_id: string;
  status: string;
  [key: string]: unknown;
}

export interface DiffTableData {
  rows: DiffRow[];
  warnings: string[];
}

export interface SignificantCounts {
  up: number;
  down: number;
}

/** Artifacts this panel keeps on screen, refetched when their stage is
 * invalidated. */
const WATCHED: Record<string, string> = {
  volcano: "diffexpr",
  heatmap: "diffexpr",
  diff_table: "diffexpr",
};

export function significantCounts(diffTable: DiffTableData): SignificantCounts {
  let up = 0;
  let down = 0;
  for (const row of diffTable.rows) {
    if (row.status === "up") up += 1;
    else if (row.status === "down") down += 1;
  }
  return { up, down };
}

export interface ValidationIssue {
  field: "fc_threshold" | "p_threshold";
  message: string;
}

export function validateThresholds(params: TestParams): ValidationIssue[] {
  const issues: ValidationIssue[] = [];
  if (!Number.isFinite(params.fc_threshold) || params.fc_threshold < 0) {
    issues.push({
      field: "fc_threshold",
      message: "fold-change threshold must be a non-negative number",
    });
  }
  if (
    !Number.isFinite(params.p_threshold) ||
    params.p_threshold <= 0 ||
    params.p_threshold > 1
  ) {
    issues.push({
      field: "p_threshold",
      message: "p-value threshold must be in (0, 1]",
    });
  }
  return issues;
}

export interface SubmitOutcome {
  submitted: boolean;
  invalidated: string[];
  refetched: Record<string, Payload>;
  issues: ValidationIssue[];
  error?: ServiceError;
}

export class ThresholdControls {
  private committed: TestParams;
  private form: TestParams;
  private inFlight = false;
  payloads: Record<string, Payload> = {};
  counts: SignificantCounts = { up: 0, down: 0 };

  constructor(
    private readonly client: ApiClient,
    private readonly sessionId: string,
    initial: TestParams,
  ) {
    this.committed = { ...initial };
    this.form = { ...initial };
  }

  get current(): TestParams {
    return { ...this.form };
  }

  setFcThreshold(value: number): void {
    this.form = { ...this.form, fc_threshold: value };
  }

  setPThreshold(value: number): void {
    this.form = { ...this.form, p_threshold: value };
  }

  setUseAdjusted(value: boolean): void {
    this.form = { ...this.form, use_adjusted: value };
  }

  /** Validate, PUT once, refetch whatever the engine invalidated. */
  async submit(): Promise<SubmitOutcome> {
    const issues = validateThresholds(this.form);
    if (issues.length > 0) {
      // Guard: invalid form never leaves the client.
      return { submitted: false, invalidated: [], refetched: {}, issues };
    }
    if (this.inFlight) {
      return {
        submitted: false,
        invalidated: [],
        refetched: {},
        issues: [],
        error: new ServiceError({
          status: 0,
          kind: "busy",
          message: "a mutation is already in flight for this session",
        }),
      };
    }
    this.inFlight = true;
    try {
      const result = await this.client.putStage(this.sessionId, "test", this.form);
      this.committed = { ...this.form };
      const invalidated = new Set(result.invalidated);
      const refetched: Record<string, Payload> = {};
      for (const [artifact, stage] of Object.entries(WATCHED)) {
        if (invalidated.has(stage)) {
          refetched[artifact] = await this.client.getPayload(this.sessionId, artifact);
          this.payloads[artifact] = refetched[artifact];
        }
      }
      if (refetched["diff_table"]) {
        this.counts = significantCounts(
          refetched["diff_table"].data as DiffTableData,
        );
      }
      return { submitted: true, invalidated: result.invalidated, refetched, issues: [] };
    } catch (exc) {
      // Roll back the form to the last state the engine accepted.
      this.form = { ...this.committed };
      const error =
        exc instanceof ServiceError
          ? exc
          : new ServiceError({ status: 0, kind: "network", message: String(exc) });
      return { submitted: false, invalidated: [], refetched: {}, issues: [], error };
    } finally {
      this.inFlight = false;
    }
  }
}
