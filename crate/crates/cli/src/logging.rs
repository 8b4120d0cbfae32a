use std::io::Write;

use env_logger::Env;

/// JSON lines on stderr, filtered by `RUST_LOG` (default `info`). Records
/// emitted while a prompt is running carry its correlation id.
pub fn init() {
    env_logger::Builder::from_env(Env::default().default_filter_or("info"))
        .format(|buf, record| {
            let mut line = serde_json::json!({
                "ts": buf.timestamp_millis().to_string(),
                "level": record.level().as_str().to_ascii_lowercase(),
                "target": record.target(),
                "message": record.args().to_string(),
            });
            if let Some(id) = grape::runner::correlation_id() {
                line["correlation_id"] = id.into();
            }
            writeln!(buf, "{line}")
        })
        .init();
}
