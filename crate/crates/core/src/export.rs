//! CSV and JSON serialization of transcripts, reports and search results.

use std::io::Write;

use serde::Serialize;

use crate::analysis::FrontierPoint;
use crate::protocol::RoundRecord;

pub const TRANSCRIPT_HEADER: [&str; 10] = [
    "round",
    "parity",
    "sent",
    "bob_bit",
    "charlie_bit",
    "announced_by",
    "announced_bit",
    "reconstructed",
    "error",
    "carrier_fidelity",
];

pub const FRONTIER_HEADER: [&str; 4] =
    ["distinguishability_constraint", "min_average_qber", "epsilon_at_min", "evaluations"];

/// Writes one row per round. Announcement columns are empty on odd rounds;
/// `reconstructed` is the bit pair (e.g. `11`) on odd rounds and a single bit
/// on even rounds.
pub fn write_transcript_csv<W: Write>(out: W, transcript: &[RoundRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRANSCRIPT_HEADER)?;
    for r in transcript {
        let (by, bit) = match r.announced {
            Some((who, b)) => (who.as_str().to_string(), b.to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([
            r.round.to_string(),
            r.parity.as_str().to_string(),
            r.sent.to_string(),
            r.bob_bit.to_string(),
            r.charlie_bit.to_string(),
            by,
            bit,
            r.reconstructed.to_string(),
            r.error.to_string(),
            r.carrier_fidelity.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_frontier_csv<W: Write>(out: W, frontier: &[FrontierPoint]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FRONTIER_HEADER)?;
    for p in frontier {
        w.write_record([
            p.distinguishability_constraint.to_string(),
            p.min_average_qber.to_string(),
            p.epsilon_at_min.to_string(),
            p.evaluations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}
