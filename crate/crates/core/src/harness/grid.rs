// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;

use super::{CellKey, GridSpec, RunRecord};
use crate::error::{invalid, Error, Result};
use crate::model::train;
use crate::tasks::{make_synthetic_task, sample_dataset, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridProgress {
    pub total: usize,
    pub skipped: usize,
    pub ran: usize,
}

/// Reads a results file written by [`run_grid`]. A missing file is empty; an
/// unterminated last line (an interrupted write) is ignored.
pub fn read_results(path: &Path) -> Result<Vec<RunRecord>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut out = Vec::new();
    for (k, line) in complete.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: RunRecord =
            serde_json::from_str(line).map_err(|e| invalid!("{}: line {}: {e}", path.display(), k + 1))?;
        out.push(r);
    }
    Ok(out)
}

fn drop_partial_line(path: &Path) -> Result<()> {
    let Ok(bytes) = fs::read(path) else {
        return Ok(());
    };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    log::warn!(
        "{}: dropping {} bytes of an unterminated record",
        path.display(),
        bytes.len() - keep
    );
    let f = OpenOptions::new().write(true).open(path)?;
    f.set_len(keep as u64)?;
    Ok(())
}

/// Runs every cell of `spec` not already present in `results`, appending one
/// JSON line per finished cell. `on_record` sees each new record.
pub fn run_grid(spec: &GridSpec, results: &Path, on_record: impl Fn(&RunRecord) + Sync) -> Result<GridProgress> {
    spec.validate()?;
    drop_partial_line(results)?;
    let done: HashSet<CellKey> = read_results(results)?.iter().map(CellKey::of).collect();
    let cells = spec.cells();
    let pending: Vec<CellKey> = cells.iter().copied().filter(|c| !done.contains(c)).collect();
    let progress = GridProgress {
        total: cells.len(),
        skipped: cells.len() - pending.len(),
        ran: pending.len(),
    };
    if pending.is_empty() {
        return Ok(progress);
    }
    if let Some(dir) = results.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }

    let task = make_synthetic_task(spec.data_seed);
    let mut datasets: BTreeMap<usize, Dataset> = BTreeMap::new();
    for c in &pending {
        if let std::collections::btree_map::Entry::Vacant(slot) = datasets.entry(c.seq_len) {
            slot.insert(sample_dataset(
                &task,
                c.seq_len,
                spec.n_train,
                spec.n_val,
                spec.data_seed,
            )?);
        }
    }

    let file = OpenOptions::new().create(true).append(true).open(results)?;
    let writer: Mutex<File> = Mutex::new(file);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads)
        .build()
        .map_err(|e| Error::State(format!("thread pool: {e}")))?;

    pool.install(|| {
        pending.par_iter().try_for_each(|cell| -> Result<()> {
            let data = &datasets[&cell.seq_len];
            let model = spec.model_config(cell, data.meta.input_dim);
            let out = train(model, &spec.train_config(cell), data)?;
            let mut line = serde_json::to_string(&out.record)?;
            line.push('\n');
            {
                let mut w = writer
                    .lock()
                    .map_err(|_| Error::State("results writer poisoned".into()))?;
                w.write_all(line.as_bytes())?;
                w.flush()?;
            }
            log::info!(
                "h={} T={} N={} seed={} val_nmse={:?}",
                cell.h,
                cell.seq_len,
                cell.hidden,
                cell.seed,
                out.record.val_nmse
            );
            on_record(&out.record);
            Ok(())
        })
    })?;
    Ok(progress)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GridSpec {
        GridSpec::from_toml_str(
            r#"
experiment_id = "grid-test"
heads = [1, 2]
lengths = [4]
seeds = [0, 1]
hidden = [6]
epochs = 2
batch_size = 16
learning_rate = 1e-3
n_train = 48
n_val = 16
head_dim = 2
threads = 1
"#,
        )
        .unwrap()
    }

    #[test]
    fn resume_is_a_no_op() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        let first = run_grid(&spec(), &path, |_| {}).unwrap();
        assert_eq!(
            first,
            GridProgress {
                total: 4,
                skipped: 0,
                ran: 4
            }
        );
        let once = fs::read(&path).unwrap();
        let second = run_grid(&spec(), &path, |_| {}).unwrap();
        assert_eq!(second.ran, 0);
        assert_eq!(fs::read(&path).unwrap(), once);
    }

    #[test]
    fn interrupted_file_is_repaired() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        let mut one = spec();
        one.seeds = vec![0];
        one.heads = vec![1];
        run_grid(&one, &path, |_| {}).unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"h\": 2, \"T\"").unwrap();
        drop(f);
        assert_eq!(read_results(&path).unwrap().len(), 1);
        let p = run_grid(&spec(), &path, |_| {}).unwrap();
        assert_eq!((p.skipped, p.ran), (1, 3));
        assert_eq!(read_results(&path).unwrap().len(), 4);
    }

    #[test]
    fn seeds_differ_only_in_seed_and_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        let mut s = spec();
        s.heads = vec![1];
        run_grid(&s, &path, |_| {}).unwrap();
        let mut rs = read_results(&path).unwrap();
        rs.sort_by_key(|r| r.seed);
        let (a, b) = (&rs[0], &rs[1]);
        assert_ne!(a.seed, b.seed);
        assert_ne!(a.val_nmse, b.val_nmse);
        let mut b2 = b.clone();
        b2.seed = a.seed;
        b2.train_nmse = a.train_nmse;
        b2.val_nmse = a.val_nmse;
        b2.wall_seconds = a.wall_seconds;
        assert_eq!(&b2, a);
    }

    #[test]
    fn cell_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        let mut s = spec();
        s.heads = vec![2];
        s.seeds = vec![1];
        run_grid(&s, &p1, |_| {}).unwrap();
        run_grid(&s, &p2, |_| {}).unwrap();
        let (a, b) = (read_results(&p1).unwrap(), read_results(&p2).unwrap());
        assert!(a[0].same_outcome(&b[0]));
    }
}
