//! Structured run logs.
//!
//! Every command writes `logs/<command>.jsonl` under the output directory:
//! one JSON object per event with a sequence number, level, event name, and
//! free-form fields. Events carry no timestamps so a rerun over unchanged
//! inputs leaves byte-identical logs. A human-readable summary of the same
//! events goes to stderr unless `--quiet` is set.

use std::fs::File;
use std::io::Write as _;
use std::path::Path;

use serde_json::{json, Value};

use crate::error::CliError;

pub struct RunLog {
    file: File,
    seq: u64,
    quiet: bool,
}

impl RunLog {
    /// Open (truncating) the log file for one command run.
    pub fn create(output_dir: &Path, command: &str, quiet: bool) -> Result<Self, CliError> {
        let dir = output_dir.join("logs");
        std::fs::create_dir_all(&dir).map_err(|e| crate::error::write_error(&dir, e))?;
        let path = dir.join(format!("{command}.jsonl"));
        let file = File::create(&path).map_err(|e| crate::error::write_error(&path, e))?;
        Ok(RunLog {
            file,
            seq: 0,
            quiet,
        })
    }

    fn write(&mut self, level: &str, event: &str, fields: &Value) {
        self.seq += 1;
        let record = json!({
            "seq": self.seq,
            "level": level,
            "event": event,
            "fields": fields,
        });
        let _ = writeln!(self.file, "{record}");
    }

    /// Log an event and, unless quiet, mirror `human` to stderr.
    pub fn info(&mut self, event: &str, human: &str, fields: Value) {
        self.write("info", event, &fields);
        if !self.quiet {
            eprintln!("{human}");
        }
    }

    pub fn warn(&mut self, event: &str, human: &str, fields: Value) {
        self.write("warn", event, &fields);
        if !self.quiet {
            eprintln!("warning: {human}");
        }
    }
}
