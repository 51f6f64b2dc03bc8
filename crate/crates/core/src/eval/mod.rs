//! Enhancement metrics, evaluation reports and spectrogram dumps.

mod metrics;
mod report;

pub use metrics::{segmental_snr, si_sdr, SegSnrParams, SI_SDR_CAP_DB};
pub use report::{
    classify_accuracy, evaluate, evaluate_set, read_spectrogram, write_spectrogram, EvalReport, EvalRow,
    UtteranceEval, REPORT_LINES_FILE, REPORT_TABLE_FILE,
};
