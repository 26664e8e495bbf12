use std::path::Path;
use std::sync::Arc;

use super::record::Record;
use super::shard::Shard;
use super::DataError;

/// Global index over an ordered list of shards via cumulative record counts.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    shards: Vec<Arc<Shard>>,
    cumulative: Vec<u64>,
}

impl DatasetIndex {
    pub fn from_shards(shards: Vec<Shard>) -> Result<Self, DataError> {
        let mut schema = None;
        for s in shards.iter().filter(|s| !s.is_empty()) {
            match &schema {
                None => schema = Some(s.schema().to_vec()),
                Some(expected) if expected.as_slice() != s.schema() => {
                    return Err(DataError::Schema(format!("{} has a different schema", s.path().display())))
                }
                Some(_) => {}
            }
        }
        let mut total = 0u64;
        let cumulative = shards
            .iter()
            .map(|s| {
                total += s.len() as u64;
                total
            })
            .collect();
        Ok(Self { shards: shards.into_iter().map(Arc::new).collect(), cumulative })
    }

    pub fn shards(&self) -> &[Arc<Shard>] {
        &self.shards
    }

    pub fn cumulative(&self) -> &[u64] {
        &self.cumulative
    }

    pub fn total(&self) -> u64 {
        self.cumulative.last().copied().unwrap_or(0)
    }

    /// Maps a global index to `(shard id, offset within shard)`.
    pub fn locate(&self, g: u64) -> Result<(usize, usize), DataError> {
        if g >= self.total() {
            return Err(DataError::OutOfRange { index: g, len: self.total() });
        }
        let shard = self.cumulative.partition_point(|&c| c <= g);
        let before = if shard == 0 { 0 } else { self.cumulative[shard - 1] };
        Ok((shard, (g - before) as usize))
    }

    /// Per-instance token lengths in global order, read from shard footers.
    pub fn token_lengths(&self) -> Vec<u32> {
        self.shards.iter().flat_map(|s| s.token_lens().iter().copied()).collect()
    }

    pub fn read(&self, g: u64) -> Result<Record, DataError> {
        let (s, off) = self.locate(g)?;
        self.shards[s].read_record(off)
    }
}

/// Opens every shard and builds the prefix-sum table over their record counts.
pub fn build_index<P: AsRef<Path>>(paths: &[P]) -> Result<DatasetIndex, DataError> {
    let shards = paths.iter().map(Shard::open).collect::<Result<Vec<_>, _>>()?;
    DatasetIndex::from_shards(shards)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::SeededRng;
    use crate::data::{write_shard, Field};

    fn rec(v: i64) -> Record {
        Record::new(vec![Field::vector_i64("v", vec![v])], 1)
    }

    fn dataset(dir: &Path, counts: &[usize]) -> (DatasetIndex, Vec<Record>) {
        let mut all = Vec::new();
        let mut paths = Vec::new();
        for (s, &n) in counts.iter().enumerate() {
            let records: Vec<Record> = (0..n).map(|i| rec((s * 1000 + i) as i64)).collect();
            let path = dir.join(format!("s{s}.hsd"));
            write_shard(&records, &path).unwrap();
            all.extend(records);
            paths.push(path);
        }
        (build_index(&paths).unwrap(), all)
    }

    #[test]
    fn prefix_sums_and_locate() {
        let dir = tempfile::tempdir().unwrap();
        let (index, _) = dataset(dir.path(), &[3, 2, 4]);
        assert_eq!(index.cumulative(), &[3, 5, 9]);
        assert_eq!(index.total(), 9);
        assert_eq!(index.locate(4).unwrap(), (1, 1));
        assert_eq!(index.locate(0).unwrap(), (0, 0));
        assert_eq!(index.locate(8).unwrap(), (2, 3));
        assert!(matches!(index.locate(9), Err(DataError::OutOfRange { .. })));
    }

    #[test]
    fn single_shard() {
        let dir = tempfile::tempdir().unwrap();
        let (index, _) = dataset(dir.path(), &[7]);
        assert_eq!(index.cumulative(), &[7]);
    }

    #[test]
    fn empty_shards_in_the_middle() {
        let dir = tempfile::tempdir().unwrap();
        let (index, all) = dataset(dir.path(), &[2, 0, 0, 3]);
        for g in 0..index.total() {
            assert_eq!(index.read(g).unwrap(), all[g as usize]);
        }
        assert_eq!(index.locate(2).unwrap(), (3, 0));
    }

    #[test]
    fn many_random_shards_match_flat_scan() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = SeededRng::new(77);
        let counts: Vec<usize> = (0..50).map(|_| rng.bounded(8) as usize).collect();
        let (index, all) = dataset(dir.path(), &counts);
        let individually: u64 = index.shards().iter().map(|s| Shard::open(s.path()).unwrap().len() as u64).sum();
        assert_eq!(index.total(), individually);
        for g in 0..index.total() {
            assert_eq!(index.read(g).unwrap(), all[g as usize]);
        }
    }

    #[test]
    fn schema_mismatch_between_shards() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.hsd");
        let b = dir.path().join("b.hsd");
        write_shard(&[rec(1)], &a).unwrap();
        write_shard(&[Record::new(vec![Field::vector_f64("v", vec![1.0])], 1)], &b).unwrap();
        assert!(matches!(build_index(&[a, b]), Err(DataError::Schema(_))));
    }
}
