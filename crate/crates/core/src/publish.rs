//! At-most-once NDJSON publisher over TCP.
//!
//! One JSON line per event. A failed write counts the line as dropped and
//! never resends it (the peer may have received it), then reconnects with
//! exponential backoff. Delivery therefore under-reports at the margin of a
//! disconnect: lines acknowledged by the local kernel but never read by the
//! peer are counted as sent.

use std::io::Write;
use std::net::TcpStream;
use std::thread::sleep;
use std::time::Duration;

use crate::detector::DetectionEvent;
use crate::error::{Error, Result};
use crate::ndjson::to_line;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublisherConfig {
    /// `host:port` of the sink.
    pub endpoint: String,
    pub backoff_base: Duration,
    pub backoff_cap: Duration,
    /// Connection attempts per connect cycle before giving up.
    pub max_attempts: u32,
    /// Write lines to stdout instead of the network.
    pub dry_run: bool,
}

impl PublisherConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        PublisherConfig {
            endpoint: endpoint.into(),
            backoff_base: Duration::from_millis(250),
            backoff_cap: Duration::from_secs(8),
            max_attempts: 6,
            dry_run: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DeliveryReport {
    pub sent: u64,
    pub dropped: u64,
    pub reconnects: u64,
}

fn backoff_delay(cfg: &PublisherConfig, attempt: u32) -> Duration {
    cfg.backoff_base
        .saturating_mul(1u32 << attempt.min(16))
        .min(cfg.backoff_cap)
}

fn connect(cfg: &PublisherConfig, report: &DeliveryReport) -> Result<TcpStream> {
    let mut last_err = String::new();
    for attempt in 0..cfg.max_attempts.max(1) {
        match TcpStream::connect(&cfg.endpoint) {
            Ok(stream) => {
                stream.set_nodelay(true).ok();
                return Ok(stream);
            }
            Err(e) => {
                last_err = e.to_string();
                if attempt + 1 < cfg.max_attempts {
                    sleep(backoff_delay(cfg, attempt));
                }
            }
        }
    }
    Err(Error::Delivery {
        delivered: report.sent,
        dropped: report.dropped,
        message: format!("connect to {} failed: {last_err}", cfg.endpoint),
    })
}

fn write_line(stream: &mut TcpStream, line: &str) -> std::io::Result<()> {
    stream.write_all(line.as_bytes())?;
    stream.write_all(b"\n")?;
    stream.flush()
}

/// Dry-run sink: every line reaches the writer, nothing can drop.
pub fn write_lines<W, I, S>(writer: &mut W, lines: I) -> Result<DeliveryReport>
where
    W: Write,
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut report = DeliveryReport::default();
    for line in lines {
        writer.write_all(line.as_ref().as_bytes())?;
        writer.write_all(b"\n")?;
        report.sent += 1;
    }
    writer.flush()?;
    Ok(report)
}

/// Publishes lines in order. Gives up with [`Error::Delivery`] only when a
/// whole reconnect cycle fails; the error carries the counts so far.
pub fn publish_lines<I, S>(cfg: &PublisherConfig, lines: I) -> Result<DeliveryReport>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if cfg.dry_run {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        return write_lines(&mut lock, lines);
    }
    let mut report = DeliveryReport::default();
    let mut stream = connect(cfg, &report)?;
    for line in lines {
        match write_line(&mut stream, line.as_ref()) {
            Ok(()) => report.sent += 1,
            Err(_) => {
                // At most once: the line may or may not have left the
                // kernel, so count it dropped and never resend it.
                report.dropped += 1;
                stream = connect(cfg, &report)?;
                report.reconnects += 1;
            }
        }
    }
    Ok(report)
}

pub fn publish_events(cfg: &PublisherConfig, events: &[DetectionEvent]) -> Result<DeliveryReport> {
    let lines: Vec<String> = events.iter().map(to_line).collect::<Result<_>>()?;
    publish_lines(cfg, &lines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use std::io::{BufRead, BufReader};
    use std::net::TcpListener;
    use std::thread;

    fn fast_cfg(endpoint: String) -> PublisherConfig {
        PublisherConfig {
            endpoint,
            backoff_base: Duration::from_millis(2),
            backoff_cap: Duration::from_millis(20),
            max_attempts: 5,
            dry_run: false,
        }
    }

    #[test]
    fn loopback_delivers_all_lines_in_order() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let sink = thread::spawn(move || {
            let (conn, _) = listener.accept().unwrap();
            BufReader::new(conn)
                .lines()
                .collect::<std::io::Result<Vec<String>>>()
                .unwrap()
        });
        let lines: Vec<String> = (0..1000)
            .map(|i| format!("{{\"t\":{i},\"motion\":false}}"))
            .collect();
        let report = publish_lines(&fast_cfg(addr.to_string()), &lines).unwrap();
        let received = sink.join().unwrap();
        assert_eq!(
            report,
            DeliveryReport {
                sent: 1000,
                dropped: 0,
                reconnects: 0
            }
        );
        assert_eq!(received, lines);
    }

    #[test]
    fn reconnects_after_midstream_disconnect() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let sink = thread::spawn(move || {
            let mut received: Vec<String> = Vec::new();
            {
                let (conn, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(conn);
                for _ in 0..50 {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap() == 0 {
                        break;
                    }
                    received.push(line.trim_end().to_string());
                }
                // Dropping the connection with unread data resets it.
            }
            let (conn, _) = listener.accept().unwrap();
            for line in BufReader::new(conn).lines() {
                received.push(line.unwrap());
            }
            received
        });
        // Large lines fill the socket buffers so the publisher is paced by
        // the sink and reliably observes the reset mid-stream.
        let payload = "x".repeat(65536);
        let total = 300usize;
        let lines: Vec<String> = (0..total).map(|i| format!("{i}:{payload}")).collect();
        let report = publish_lines(&fast_cfg(addr.to_string()), &lines).unwrap();
        let received = sink.join().unwrap();

        assert_eq!(report.reconnects, 1, "report: {report:?}");
        assert_eq!(report.sent + report.dropped, total as u64);
        let ids: Vec<usize> = received
            .iter()
            .map(|l| l.split(':').next().unwrap().parse().unwrap())
            .collect();
        assert!(ids.windows(2).all(|p| p[0] < p[1]), "out of order: {ids:?}");
        assert!(ids.len() >= 50);
        assert!((ids.len() as u64) <= report.sent);
        assert_eq!(*ids.last().unwrap(), total - 1);
    }

    #[test]
    fn gives_up_with_a_counting_delivery_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let mut cfg = fast_cfg(addr.to_string());
        cfg.max_attempts = 2;
        let err = publish_lines(&cfg, ["a", "b"]).unwrap_err();
        match err {
            Error::Delivery {
                delivered: 0,
                dropped: 0,
                ..
            } => {}
            other => panic!("expected delivery error, got {other:?}"),
        }
    }

    #[test]
    fn dry_run_counts_into_the_writer() {
        let mut sink = Vec::new();
        let report = write_lines(&mut sink, ["x", "y"]).unwrap();
        assert_eq!(report.sent, 2);
        assert_eq!(String::from_utf8(sink).unwrap(), "x\ny\n");
    }

    #[test]
    fn events_serialize_one_per_line() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let sink = thread::spawn(move || {
            let (conn, _) = listener.accept().unwrap();
            BufReader::new(conn)
                .lines()
                .collect::<std::io::Result<Vec<String>>>()
                .unwrap()
        });
        let events: Vec<DetectionEvent> = (0..3)
            .map(|t| DetectionEvent {
                t,
                motion: t == 1,
                score: t as f64 - 1.0,
                aoa_delta_deg: Some(6.0),
                contributing: BTreeMap::new(),
                imputed: false,
            })
            .collect();
        let report = publish_events(&fast_cfg(addr.to_string()), &events).unwrap();
        let received = sink.join().unwrap();
        assert_eq!(report.sent, 3);
        assert_eq!(received.len(), 3);
        for (line, event) in received.iter().zip(&events) {
            let parsed: DetectionEvent = serde_json::from_str(line).unwrap();
            assert_eq!(&parsed, event);
        }
    }
}
