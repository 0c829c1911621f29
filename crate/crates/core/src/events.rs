//! Observed price-jump data: event times (days) and mark indices.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub mark: usize,
}

/// How the `mark` column of an event CSV is encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkEncoding {
    /// Zero-based index into the model's list of marks.
    Index,
    /// Signed tick count; only the sign is used, mapped onto the positive
    /// and negative mark of a two-mark model.
    SignedTicks { up: usize, down: usize },
}

impl MarkEncoding {
    /// Signed-tick encoding for a model with exactly one up and one down mark.
    pub fn signed_ticks_for(spec: &ModelSpec) -> Result<Self> {
        let marks = spec.jumps.marks();
        if marks.len() != 2 {
            return Err(Error::Input("signed tick marks need a two-mark model".into()));
        }
        match (marks[0] > 0.0, marks[1] > 0.0) {
            (true, false) => Ok(Self::SignedTicks { up: 0, down: 1 }),
            (false, true) => Ok(Self::SignedTicks { up: 1, down: 0 }),
            _ => Err(Error::Input("signed tick marks need one positive and one negative mark".into())),
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawRow {
    t: f64,
    mark: i64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    /// Builds a log, rejecting non-finite, negative or non-increasing times.
    pub fn new(events: Vec<Event>) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if !e.t.is_finite() || e.t < 0.0 {
                return Err(Error::Input(format!("event {i}: invalid time {}", e.t)));
            }
            if i > 0 && e.t <= events[i - 1].t {
                return Err(Error::Input(format!(
                    "event {i}: time {} does not exceed previous time {}",
                    e.t,
                    events[i - 1].t
                )));
            }
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.events.last().map(|e| e.t)
    }

    /// Checks the log against a model: marks in range, times within `[0, horizon]`.
    pub fn check_against(&self, n_marks: usize, horizon: f64) -> Result<()> {
        for (i, e) in self.events.iter().enumerate() {
            if e.mark >= n_marks {
                return Err(Error::Input(format!("event {i}: mark {} out of range", e.mark)));
            }
            if e.t > horizon {
                return Err(Error::Input(format!("event {i}: time {} beyond horizon {horizon}", e.t)));
            }
        }
        Ok(())
    }

    pub fn counts(&self, n_marks: usize) -> Vec<usize> {
        let mut c = vec![0; n_marks];
        for e in &self.events {
            c[e.mark] += 1;
        }
        c
    }

    pub fn read_csv<R: Read>(reader: R, encoding: MarkEncoding) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut events = Vec::new();
        for (i, row) in rdr.deserialize::<RawRow>().enumerate() {
            let row = row.map_err(|e| Error::Input(format!("event row {}: {e}", i + 1)))?;
            let mark = match encoding {
                MarkEncoding::Index => usize::try_from(row.mark)
                    .map_err(|_| Error::Input(format!("event row {}: negative mark index", i + 1)))?,
                MarkEncoding::SignedTicks { up, down } => match row.mark.signum() {
                    1 => up,
                    -1 => down,
                    _ => return Err(Error::Input(format!("event row {}: zero tick count", i + 1))),
                },
            };
            events.push(Event { t: row.t, mark });
        }
        Self::new(events)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "mark"])?;
        for e in &self.events {
            w.write_record([format!("{}", e.t), e.mark.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unsorted() {
        let ev = vec![Event { t: 0.2, mark: 0 }, Event { t: 0.1, mark: 1 }];
        assert!(matches!(EventLog::new(ev), Err(Error::Input(_))));
        let ev = vec![Event { t: 0.2, mark: 0 }, Event { t: 0.2, mark: 1 }];
        assert!(EventLog::new(ev).is_err());
    }

    #[test]
    fn csv_roundtrip_and_ticks() {
        let log = EventLog::new(vec![Event { t: 0.125, mark: 0 }, Event { t: 0.5, mark: 1 }]).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(EventLog::read_csv(buf.as_slice(), MarkEncoding::Index).unwrap(), log);

        let text = "t,mark\n0.1,2\n0.3,-1\n";
        let enc = MarkEncoding::signed_ticks_for(&ModelSpec::table2()).unwrap();
        let ticks = EventLog::read_csv(text.as_bytes(), enc).unwrap();
        assert_eq!(ticks.events()[0].mark, 0);
        assert_eq!(ticks.events()[1].mark, 1);
        assert!(EventLog::read_csv("t,mark\n0.1,0\n".as_bytes(), enc).is_err());
    }
}
