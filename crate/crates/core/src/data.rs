//! Interaction logs, leave-one-out splitting and synthetic rule datasets.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::itemspace::{ItemId, PADDING};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
}

/// Raw interactions in input order, without duplicate triples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionLog {
    records: Vec<Interaction>,
}

impl InteractionLog {
    /// Builds a log, dropping exact repeats of a `(user, item, timestamp)` triple.
    pub fn from_records(records: impl IntoIterator<Item = Interaction>) -> Self {
        let mut seen = HashSet::new();
        let records = records.into_iter().filter(|r| seen.insert(r.clone())).collect();
        Self { records }
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes a tab-separated file with a header row.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_path(path)?;
        w.write_record(["user_id", "item_id", "timestamp"])?;
        for r in &self.records {
            w.write_record([r.user.as_str(), r.item.as_str(), &r.timestamp.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a TSV or CSV file with a `user_id, item_id, timestamp` header.
/// The delimiter is inferred from the header line; extra columns are ignored.
pub fn ingest_interactions(path: &Path) -> Result<InteractionLog> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_interactions(&text)
}

pub fn parse_interactions(text: &str) -> Result<InteractionLog> {
    let header = text.lines().next().ok_or(Error::Empty("interaction file"))?;
    let delimiter = if header.contains('\t') { b'\t' } else { b',' };
    let mut reader =
        csv::ReaderBuilder::new().delimiter(delimiter).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let column =
        |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let (cu, ci, ct) = (column("user_id")?, column("item_id")?, column("timestamp")?);
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize, name: &str| {
            row.get(c)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| Error::Malformed { line, msg: format!("missing {name}") })
        };
        let user = field(cu, "user_id")?.to_string();
        let item = field(ci, "item_id")?.to_string();
        let ts = field(ct, "timestamp")?;
        let timestamp = ts
            .parse::<i64>()
            .map_err(|_| Error::Malformed { line, msg: format!("timestamp {ts:?} is not an integer") })?;
        records.push(Interaction { user, item, timestamp });
    }
    Ok(InteractionLog::from_records(records))
}

/// One training or evaluation example: a left-padded history and its next item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionSequence {
    /// Index into [`SplitDataset::users`].
    pub user: u32,
    pub history: Vec<ItemId>,
    pub target: ItemId,
}

impl InteractionSequence {
    /// History with padding removed.
    pub fn unpadded(&self) -> &[ItemId] {
        let start = self.history.iter().position(|&i| i != PADDING).unwrap_or(self.history.len());
        &self.history[start..]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Vec<InteractionSequence>,
    pub validation: Vec<InteractionSequence>,
    pub test: Vec<InteractionSequence>,
    /// `items[i]` is the raw ID of item `i + 1`.
    pub items: Vec<String>,
    pub users: Vec<String>,
    pub max_len: usize,
}

#[derive(Serialize, Deserialize)]
struct Vocab {
    max_len: usize,
    items: Vec<String>,
    users: Vec<String>,
}

const MAGIC: &[u8; 4] = b"DCRS";
const VERSION: u32 = 1;

impl SplitDataset {
    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn item_id(&self, raw: &str) -> Option<ItemId> {
        self.items.iter().position(|s| s == raw).map(|i| i as ItemId + 1)
    }

    pub fn raw_item(&self, id: ItemId) -> Option<&str> {
        (id as usize).checked_sub(1).and_then(|i| self.items.get(i)).map(String::as_str)
    }

    /// Writes `dataset.bin` and `vocab.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join("dataset.bin"))?);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.max_len as u32)?;
        for split in [&self.train, &self.validation, &self.test] {
            w.write_u32::<LittleEndian>(split.len() as u32)?;
            for s in split {
                w.write_u32::<LittleEndian>(s.user)?;
                w.write_u32::<LittleEndian>(s.target)?;
                for &h in &s.history {
                    w.write_u32::<LittleEndian>(h)?;
                }
            }
        }
        w.flush()?;
        let vocab = Vocab { max_len: self.max_len, items: self.items.clone(), users: self.users.clone() };
        std::fs::write(dir.join("vocab.json"), serde_json::to_string_pretty(&vocab)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let vocab: Vocab = serde_json::from_str(&std::fs::read_to_string(dir.join("vocab.json"))?)?;
        let mut r = BufReader::new(File::open(dir.join("dataset.bin"))?);
        let bad = |m: String| Error::InvalidCheckpoint(format!("dataset.bin: {m}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let max_len = r.read_u32::<LittleEndian>()? as usize;
        if max_len != vocab.max_len || max_len < 2 {
            return Err(bad(format!("max_len {max_len} disagrees with vocab.json")));
        }
        let mut splits = Vec::with_capacity(3);
        for _ in 0..3 {
            let count = r.read_u32::<LittleEndian>()? as usize;
            let mut split = Vec::with_capacity(count);
            for _ in 0..count {
                let user = r.read_u32::<LittleEndian>()?;
                let target = r.read_u32::<LittleEndian>()?;
                let mut history = vec![0; max_len - 1];
                r.read_u32_into::<LittleEndian>(&mut history)?;
                let max_id = vocab.items.len() as u32;
                if target == PADDING || target > max_id || history.iter().any(|&h| h > max_id) {
                    return Err(bad("item ID outside the vocabulary".into()));
                }
                split.push(InteractionSequence { user, history, target });
            }
            splits.push(split);
        }
        let test = splits.pop().expect("three splits");
        let validation = splits.pop().expect("three splits");
        let train = splits.pop().expect("three splits");
        Ok(Self { train, validation, test, items: vocab.items, users: vocab.users, max_len })
    }
}

fn padded(items: &[ItemId], len: usize) -> Vec<ItemId> {
    let mut out = vec![PADDING; len - items.len()];
    out.extend_from_slice(items);
    out
}

/// Per-user chronological sort, `min_len` filter, truncation to the latest
/// `max_len` interactions and leave-one-out split.
///
/// Test holds each user's last item, validation the second-last. Training
/// takes every prefix ending before those two as a `(history, target)` pair.
/// Histories are left-padded with `0` to `max_len − 1`.
pub fn preprocess(log: &InteractionLog, max_len: usize, min_len: usize) -> Result<SplitDataset> {
    if log.is_empty() {
        return Err(Error::Empty("interaction log"));
    }
    if max_len < 3 || min_len < 3 || min_len > max_len {
        return Err(Error::InvalidConfig(format!(
            "need 3 <= min_len <= max_len, got min_len {min_len}, max_len {max_len}"
        )));
    }
    let mut user_order: Vec<&str> = Vec::new();
    let mut per_user: HashMap<&str, Vec<(i64, &str)>> = HashMap::new();
    for r in log.records() {
        per_user
            .entry(r.user.as_str())
            .or_insert_with(|| {
                user_order.push(r.user.as_str());
                Vec::new()
            })
            .push((r.timestamp, r.item.as_str()));
    }

    let mut items: Vec<String> = Vec::new();
    let mut item_ids: HashMap<&str, ItemId> = HashMap::new();
    let mut users = Vec::new();
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let hist_len = max_len - 1;
    for user in user_order {
        let events = per_user.get_mut(user).expect("user present");
        if events.len() < min_len {
            continue;
        }
        events.sort_by_key(|e| e.0);
        let kept = &events[events.len().saturating_sub(max_len)..];
        let seq: Vec<ItemId> = kept
            .iter()
            .map(|&(_, item)| {
                *item_ids.entry(item).or_insert_with(|| {
                    items.push(item.to_string());
                    items.len() as ItemId
                })
            })
            .collect();
        let u = users.len() as u32;
        users.push(user.to_string());
        let n = seq.len();
        test.push(InteractionSequence { user: u, history: padded(&seq[..n - 1], hist_len), target: seq[n - 1] });
        validation.push(InteractionSequence { user: u, history: padded(&seq[..n - 2], hist_len), target: seq[n - 2] });
        for k in 1..n - 2 {
            train.push(InteractionSequence { user: u, history: padded(&seq[..k], hist_len), target: seq[k] });
        }
    }
    if users.is_empty() {
        return Err(Error::Empty("users surviving the length filter"));
    }
    Ok(SplitDataset { train, validation, test, items, users, max_len })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Every user walks `i → i + 1 (mod n)`.
    Cycle,
    /// Each user walks forward (`+1`) or backward (`−1`) depending on a latent type.
    Mixture,
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cycle" => Ok(Self::Cycle),
            "mixture" => Ok(Self::Mixture),
            other => Err(Error::InvalidConfig(format!("unknown synthetic kind {other:?}"))),
        }
    }
}

/// Latent user type of the mixture generator.
pub fn mixture_step(user_type: bool) -> i64 {
    if user_type {
        1
    } else {
        -1
    }
}

/// Planted-rule interaction log. Items are named by their index `0..n_items`,
/// users `u0, u1, …`, and timestamps are positions within the walk.
pub fn make_synthetic(
    kind: SyntheticKind,
    n_users: usize,
    n_items: usize,
    seq_len: usize,
    seed: u64,
) -> Result<InteractionLog> {
    if n_items < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 items, got {n_items}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_users * seq_len);
    for u in 0..n_users {
        let start = rng.random_range(0..n_items) as i64;
        let step = match kind {
            SyntheticKind::Cycle => 1,
            SyntheticKind::Mixture => mixture_step(rng.random_bool(0.5)),
        };
        for pos in 0..seq_len {
            let item = (start + step * pos as i64).rem_euclid(n_items as i64);
            records.push(Interaction { user: format!("u{u}"), item: item.to_string(), timestamp: pos as i64 });
        }
    }
    Ok(InteractionLog::from_records(records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(u: &str, i: &str, t: i64) -> Interaction {
        Interaction { user: u.into(), item: i.into(), timestamp: t }
    }

    #[test]
    fn parses_and_deduplicates() {
        let log = parse_interactions("user_id\titem_id\ttimestamp\na\tx\t3\na\ty\t1\nb\tx\t2\n").unwrap();
        assert_eq!(log.len(), 3);
        assert_eq!(log.records()[0], rec("a", "x", 3));
        let log = parse_interactions("user_id,item_id,timestamp\na,x,3\na,x,3\nb,x,2\n").unwrap();
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn reports_line_numbers_and_missing_columns() {
        let err = parse_interactions("user_id\titem_id\ttimestamp\na\tx\t3\nb\ty\tsoon\n").unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 3, .. }), "{err:?}");
        let err = parse_interactions("user_id\titem\ttimestamp\na\tx\t3\n").unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "item_id"));
        assert!(parse_interactions("").is_err());
    }

    #[test]
    fn five_interaction_user_enumeration() {
        let log = InteractionLog::from_records(
            ["a", "b", "c", "d", "e"].iter().enumerate().map(|(t, i)| rec("u", i, t as i64)),
        );
        let d = preprocess(&log, 6, 5).unwrap();
        assert_eq!(d.items, vec!["a", "b", "c", "d", "e"]);
        let seq = |h: &[u32], t| InteractionSequence { user: 0, history: padded(h, 5), target: t };
        assert_eq!(d.test, vec![seq(&[1, 2, 3, 4], 5)]);
        assert_eq!(d.validation, vec![seq(&[1, 2, 3], 4)]);
        assert_eq!(d.train, vec![seq(&[1], 2), seq(&[1, 2], 3)]);
    }

    #[test]
    fn sorting_is_stable_on_ties() {
        let log = InteractionLog::from_records(vec![
            rec("u", "c", 5),
            rec("u", "a", 1),
            rec("u", "b", 1),
            rec("u", "d", 7),
            rec("u", "e", 9),
        ]);
        let d = preprocess(&log, 50, 5).unwrap();
        let raw: Vec<&str> = d.test[0].unpadded().iter().map(|&i| d.raw_item(i).unwrap()).collect();
        assert_eq!(raw, vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn filters_and_truncates() {
        let mut recs = Vec::new();
        for t in 0..60 {
            recs.push(rec("long", &format!("i{t}"), t));
        }
        for t in 0..4 {
            recs.push(rec("short", &format!("i{t}"), t));
        }
        let d = preprocess(&InteractionLog::from_records(recs), 50, 5).unwrap();
        assert_eq!(d.users, vec!["long"]);
        assert_eq!(d.num_items(), 50);
        assert_eq!(d.raw_item(d.test[0].target), Some("i59"));
        assert_eq!(d.raw_item(d.test[0].history[0]), Some("i10"));
        assert_eq!(d.train.len(), 47);
        assert!(d.train.iter().chain(&d.validation).chain(&d.test).all(|s| s.target != PADDING));
    }

    #[test]
    fn cycle_walk_follows_rule() {
        let log = make_synthetic(SyntheticKind::Cycle, 30, 50, 10, 4).unwrap();
        for u in log.records().chunks(10) {
            let items: Vec<i64> = u.iter().map(|r| r.item.parse().unwrap()).collect();
            for w in items.windows(2) {
                assert_eq!(w[1], (w[0] + 1) % 50);
            }
        }
        assert_eq!(log, make_synthetic(SyntheticKind::Cycle, 30, 50, 10, 4).unwrap());
    }

    #[test]
    fn roundtrip_through_disk() {
        let d = preprocess(&make_synthetic(SyntheticKind::Mixture, 20, 15, 8, 2).unwrap(), 6, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        assert_eq!(SplitDataset::load(dir.path()).unwrap(), d);
    }
}
