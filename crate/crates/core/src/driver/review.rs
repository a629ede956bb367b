use std::io::{BufRead, Write};

use crate::llm::{InvestigationVerdict, LlmSession, RcaReport, StageError};

use super::Incident;

/// Decides whether a report explains the incident.
pub trait Reviewer {
    fn review(
        &mut self,
        session: &mut LlmSession<'_>,
        report: &RcaReport,
        incident: &Incident,
        threshold: u8,
    ) -> Result<InvestigationVerdict, StageError>;
}

/// Asks the estimator stage for a score.
#[derive(Debug, Default, Clone, Copy)]
pub struct EstimatorReviewer;

impl Reviewer for EstimatorReviewer {
    fn review(
        &mut self,
        session: &mut LlmSession<'_>,
        report: &RcaReport,
        incident: &Incident,
        threshold: u8,
    ) -> Result<InvestigationVerdict, StageError> {
        session.estimate_investigation(report, incident, threshold)
    }
}

/// Shows the report to an operator and asks for a yes/no answer. A yes
/// scores 10 and a no scores 0; end of input counts as no.
pub struct StdinReviewer<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> StdinReviewer<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Self { input, output }
    }
}

impl<R: BufRead, W: Write> Reviewer for StdinReviewer<R, W> {
    fn review(
        &mut self,
        _session: &mut LlmSession<'_>,
        report: &RcaReport,
        _incident: &Incident,
        threshold: u8,
    ) -> Result<InvestigationVerdict, StageError> {
        let io_err = |e: std::io::Error| StageError::StageFailure {
            stage: crate::llm::Stage::Estimator,
            detail: format!("reading operator answer: {e}"),
        };
        writeln!(
            self.output,
            "\nTrial {} conclusion:\n{}",
            report.trial_index, report.conclusion
        )
        .map_err(io_err)?;
        for c in &report.commands {
            writeln!(self.output, "  suggested: {c}").map_err(io_err)?;
        }
        loop {
            write!(self.output, "Does this explain the incident? [y/n] ").map_err(io_err)?;
            self.output.flush().map_err(io_err)?;
            let mut line = String::new();
            if self.input.read_line(&mut line).map_err(io_err)? == 0 {
                return Ok(InvestigationVerdict::new(0, threshold, "no operator answer"));
            }
            match line.trim().to_ascii_lowercase().as_str() {
                "y" | "yes" => return Ok(InvestigationVerdict::new(10, threshold, "accepted by operator")),
                "n" | "no" => return Ok(InvestigationVerdict::new(0, threshold, "rejected by operator")),
                _ => continue,
            }
        }
    }
}
