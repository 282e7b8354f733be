//! Scenario files, experiment runs and report emission.

mod report;
mod scenario;

pub use report::{
    emit_report, emit_traces, report_csv, report_json, run, run_scenario, Format, LinkReport,
    NodeReport, PortReport, PtpSummary, Report, Run, SlaveSync, Totals, CSV_HEADER,
};
pub use scenario::{
    load_scenario, parse_scenario, Fault, Grid, PortName, PortSchedule, Scenario, ScenarioError,
    MAX_DRIFT_PPM,
};
