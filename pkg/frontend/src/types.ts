/** Wire types for the review service API. Decimals travel as strings. */

export interface RunSummary {
  run_id: string;
  totals: Totals;
  accuracy_percent: number;
  oracle_only: boolean;
}

export interface Totals {
  problems: number;
  solved: number;
  unsolved: number;
  error: number;
  pending: number;
}

export interface RunReport {
  run_id: string;
  totals: Totals;
  accuracy_percent: number;
  refinement_histogram: Record<string, number>;
  cross_check_stats: Record<string, number>;
  oracle_only: boolean;
  wall_time?: number;
}

export interface SessionSummary {
  session_id: string;
  run_id: string;
  problem_id: string;
  problem_excerpt: string;
  verdict: string;
  refinements_used: number;
  attempts: number;
  last_comparison: string | null;
}

export interface ExecRecord {
  status: string;
  value: string | null;
  stdout_tail: string;
  stderr_tail: string;
  duration: number;
}

export interface OutcomeRecord {
  index: number;
  exec: ExecRecord | null;
  oracle_value: string | null;
  oracle_error: string | null;
  resolved_value: string | null;
  cross_check: string;
}

export interface BindingRecord {
  name: string;
  literal: string | null;
  ref: number | null;
}

export interface SubproblemRecord {
  index: number;
  description: string;
  expression: string;
  bindings: BindingRecord[];
  depends_on: number[];
  claimed_value: string | null;
  code: {
    language_tag: string;
    source: string;
    entry_function: string;
    parameters: string[];
  };
}

export interface SolutionRecord {
  subproblems: SubproblemRecord[];
  final_answer_claimed: string | null;
  raw_text: string;
}

export interface AttemptRecord {
  turn_index: number;
  prompt_sent: string;
  raw_response: string;
  parsed: SolutionRecord | null;
  parse_error: string | null;
  computed: Record<string, OutcomeRecord>;
  composed_answer: string | null;
  comparison: string;
  flags: string[];
}

export interface SessionDetail {
  session_id: string;
  run_id: string;
  max_refinements: number;
  pending_feedback: boolean;
  problem: {
    id: string;
    statement: string;
    gold_raw: string;
    gold_value: string;
  };
  attempts: AttemptRecord[];
  refinements: { kind: string; flagged_indices: number[]; message: string }[];
  verdict: string;
  refinements_used: number;
  mode: string;
  error_detail: string | null;
  created_at: string;
}

export interface PendingItem {
  session_id: string;
  run_id: string;
  problem_id: string;
  problem_excerpt: string;
  created_at: string;
  attempts_total: number;
  max_attempts: number;
  attempt_snapshot: AttemptRecord;
}

export type RefinementKind = "check_calculations" | "flag_subproblem" | "custom";

export interface RefineRequest {
  feedback_id: string;
  kind: RefinementKind;
  flagged_indices?: number[];
  message?: string;
}

export interface RefineAck {
  session_id: string;
  verdict: string;
  refinements_used: number;
  attempts: number;
  last_comparison: string | null;
}
