//! Line-delimited JSON logs on stderr, or plain warnings with `--quiet`.

use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{Level, LevelFilter, Log, Metadata, Record};

struct Logger {
    quiet: bool,
}

impl Log for Logger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= if self.quiet { Level::Warn } else { Level::Info }
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let line = if self.quiet {
            format!("{}: {}", record.level().as_str().to_lowercase(), record.args())
        } else {
            let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
            serde_json::json!({
                "ts": (ts * 1e3).round() / 1e3,
                "level": record.level().as_str().to_lowercase(),
                "target": record.target(),
                "msg": record.args().to_string(),
            })
            .to_string()
        };
        let _ = writeln!(std::io::stderr().lock(), "{line}");
    }

    fn flush(&self) {}
}

pub fn init(quiet: bool) {
    let level = if quiet { LevelFilter::Warn } else { LevelFilter::Info };
    if log::set_boxed_logger(Box::new(Logger { quiet })).is_ok() {
        log::set_max_level(level);
    }
}
