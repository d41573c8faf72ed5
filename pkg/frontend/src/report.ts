// Final report panel model: the record's metrics, verbatim.

import type { TrialRecordJson } from "./protocol.js";

export interface ReportRow {
  key: string;
  value: number | string;
}

export function buildReport(record: TrialRecordJson): ReportRow[] {
  const rows: ReportRow[] = [{ key: "status", value: record.status }];
  if (record.abort_cause) rows.push({ key: "abort_cause", value: record.abort_cause });
  for (const key of Object.keys(record.metrics).sort()) {
    rows.push({ key, value: record.metrics[key] });
  }
  return rows;
}

export function formatValue(v: number | string): string {
  if (typeof v === "string") return v;
  return Math.abs(v) >= 100 ? v.toFixed(1) : v.toFixed(3);
}
