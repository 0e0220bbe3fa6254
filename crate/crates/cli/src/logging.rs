//! Logger that prints through env_logger and keeps warnings for manifests.

use std::sync::Mutex;

use log::{Level, Log, Metadata, Record};

static WARNINGS: Mutex<Vec<String>> = Mutex::new(Vec::new());

struct Capture {
    inner: env_logger::Logger,
}

impl Log for Capture {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= Level::Warn || self.inner.enabled(metadata)
    }

    fn log(&self, record: &Record) {
        if record.level() <= Level::Warn {
            WARNINGS.lock().expect("warning buffer").push(record.args().to_string());
        }
        if self.inner.matches(record) {
            self.inner.log(record);
        }
    }

    fn flush(&self) {
        self.inner.flush();
    }
}

/// Installs the logger. The level comes from `MOBISCOPE_LOG`
/// (error, warn, info, debug), default warn.
pub fn init() {
    let inner = env_logger::Builder::from_env(env_logger::Env::new().filter_or("MOBISCOPE_LOG", "warn")).build();
    let max = inner.filter().max(log::LevelFilter::Warn);
    if log::set_boxed_logger(Box::new(Capture { inner })).is_ok() {
        log::set_max_level(max);
    }
}

/// Warnings logged since the last call, sorted so that parallel stages
/// produce stable manifests.
pub fn take_warnings() -> Vec<String> {
    let mut w = std::mem::take(&mut *WARNINGS.lock().expect("warning buffer"));
    w.sort();
    w
}
