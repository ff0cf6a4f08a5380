//! Records, non-IID Dirichlet partitioning and per-client splits.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::rng;
use crate::tensor::Matrix;

/// One encoded row: prediction features, sensitive group index, label.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Record {
    pub features: Vec<f64>,
    pub sensitive: usize,
    pub label: bool,
}

/// Column-packed table of records, the form the trainer consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub sensitive: Vec<usize>,
    pub labels: Vec<bool>,
}

impl Dataset {
    pub fn empty(dim: usize) -> Self {
        Dataset {
            features: Matrix::zeros(0, dim),
            sensitive: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_records<'a, I>(dim: usize, records: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Record>,
    {
        let mut data = Vec::new();
        let mut sensitive = Vec::new();
        let mut labels = Vec::new();
        for r in records {
            if r.features.len() != dim {
                return Err(Error::dim("record features", dim, r.features.len()));
            }
            data.extend_from_slice(&r.features);
            sensitive.push(r.sensitive);
            labels.push(r.label);
        }
        Ok(Dataset {
            features: Matrix::from_vec(labels.len(), dim, data)?,
            sensitive,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Gathers the given rows into a training batch.
    pub fn batch(&self, rows: &[usize]) -> Batch {
        let dim = self.dim();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for &r in rows {
            data.extend_from_slice(self.features.row(r));
        }
        Batch {
            features: Matrix::from_vec(rows.len(), dim, data).expect("row gather keeps shape"),
            sensitive: rows.iter().map(|&r| self.sensitive[r]).collect(),
            labels: rows
                .iter()
                .map(|&r| if self.labels[r] { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Row-wise concatenation.
    pub fn concat<'a, I>(dim: usize, parts: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Dataset>,
    {
        let mut data = Vec::new();
        let mut sensitive = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim() != dim {
                return Err(Error::dim("dataset width", dim, p.dim()));
            }
            data.extend_from_slice(p.features.as_slice());
            sensitive.extend_from_slice(&p.sensitive);
            labels.extend_from_slice(&p.labels);
        }
        Ok(Dataset {
            features: Matrix::from_vec(labels.len(), dim, data)?,
            sensitive,
            labels,
        })
    }
}

/// Row indices (into the source record list) of one client's splits.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitRows {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub id: usize,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub rows: SplitRows,
}

impl ClientDataset {
    /// Builds a client from explicit row assignments into `records`.
    pub fn from_rows(id: usize, dim: usize, records: &[Record], rows: SplitRows) -> Result<Self> {
        let pick = |idx: &[usize]| -> Result<Dataset> {
            if let Some(&bad) = idx.iter().find(|&&i| i >= records.len()) {
                return Err(Error::Input(format!(
                    "client {id}: row {bad} is out of range for {} records",
                    records.len()
                )));
            }
            Dataset::from_records(dim, idx.iter().map(|&i| &records[i]))
        };
        let train = pick(&rows.train)?;
        if train.is_empty() {
            return Err(Error::Input(format!("client {id} has an empty training split")));
        }
        Ok(ClientDataset {
            id,
            validation: pick(&rows.validation)?,
            test: pick(&rows.test)?,
            train,
            rows,
        })
    }

    /// Training-set size, the aggregation weight.
    pub fn n(&self) -> usize {
        self.train.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PartitionSpec {
    /// Dirichlet concentration per client; its length is the client count.
    pub client_alphas: Vec<f64>,
    pub seed: u64,
    /// Redraw the proportions until every client holds at least this many
    /// records. Zero disables redrawing.
    #[cfg_attr(feature = "serde", serde(default))]
    pub min_client_records: usize,
}

impl PartitionSpec {
    pub fn new(client_alphas: Vec<f64>, seed: u64) -> Self {
        PartitionSpec {
            client_alphas,
            seed,
            min_client_records: 0,
        }
    }

    pub fn num_clients(&self) -> usize {
        self.client_alphas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.client_alphas.is_empty() {
            return Err(Error::Config("at least one client is required".into()));
        }
        if let Some((i, a)) = self
            .client_alphas
            .iter()
            .enumerate()
            .find(|(_, a)| !(**a > 0.0 && a.is_finite()))
        {
            return Err(Error::Config(format!(
                "client_alphas[{i}] = {a} must be a positive finite number"
            )));
        }
        Ok(())
    }
}

/// Result of a Dirichlet partition over row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// Ascending row indices per client.
    pub clients: Vec<Vec<usize>>,
    /// Sensitive values in ascending order, matching `proportions`.
    pub values: Vec<usize>,
    /// Drawn fraction of each value assigned to each client.
    pub proportions: Vec<Vec<f64>>,
    /// Number of Dirichlet draws made (more than one only when redrawing for
    /// `min_client_records`).
    pub attempts: usize,
    pub warnings: Vec<String>,
}

const MAX_PARTITION_ATTEMPTS: usize = 10_000;

fn dirichlet_draw<R: Rng>(alphas: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let mut draws = Vec::with_capacity(alphas.len());
    for &a in alphas {
        let g = Gamma::new(a, 1.0).map_err(|e| Error::Config(format!("gamma({a}): {e}")))?;
        draws.push(g.sample(rng));
    }
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter_mut().for_each(|d| *d /= total);
    } else {
        // Every component underflowed; put all mass on one client.
        let pick = rng.random_range(0..alphas.len());
        draws.iter_mut().enumerate().for_each(|(i, d)| {
            *d = if i == pick { 1.0 } else { 0.0 };
        });
    }
    Ok(draws)
}

/// Integer block sizes summing exactly to `count`, by largest remainder.
/// Ties on the remainder go to the lower client index.
pub fn largest_remainder(proportions: &[f64], count: usize) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * count as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| libm::floor(*q) as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - libm::floor(quotas[a]);
        let rb = quotas[b] - libm::floor(quotas[b]);
        rb.partial_cmp(&ra)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &i in order.iter().take(count.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Splits row indices among clients, one Dirichlet draw per sensitive value.
///
/// For each value `v` (ascending), proportions are drawn from
/// `Dir(client_alphas)`, the rows holding `v` are shuffled, and contiguous
/// blocks of largest-remainder sizes go to clients `0..N` in order.
pub fn dirichlet_partition_indices(sensitive: &[usize], spec: &PartitionSpec) -> Result<Partition> {
    spec.validate()?;
    if sensitive.is_empty() {
        return Err(Error::Input("cannot partition an empty record list".into()));
    }
    let n_clients = spec.num_clients();
    let mut by_value: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (row, &v) in sensitive.iter().enumerate() {
        by_value.entry(v).or_default().push(row);
    }
    let values: Vec<usize> = by_value.keys().copied().collect();
    let counts: Vec<usize> = by_value.values().map(Vec::len).collect();

    let mut warnings = Vec::new();
    for (v, c) in values.iter().zip(&counts) {
        if *c < n_clients {
            warnings.push(format!(
                "sensitive value {v} has {c} records for {n_clients} clients; some clients will not see it"
            ));
        }
    }
    if spec.min_client_records * n_clients > sensitive.len() {
        return Err(Error::Config(format!(
            "{} records cannot give {n_clients} clients at least {} each",
            sensitive.len(),
            spec.min_client_records
        )));
    }

    let mut rng = rng::derived_stream(spec.seed, &[rng::tag::PARTITION]);
    let mut attempts = 0;
    let (proportions, sizes) = loop {
        attempts += 1;
        let mut props = Vec::with_capacity(values.len());
        let mut sizes = Vec::with_capacity(values.len());
        for &count in &counts {
            let p = dirichlet_draw(&spec.client_alphas, &mut rng)?;
            sizes.push(largest_remainder(&p, count));
            props.push(p);
        }
        let smallest = (0..n_clients)
            .map(|c| sizes.iter().map(|s: &Vec<usize>| s[c]).sum::<usize>())
            .min()
            .unwrap_or(0);
        if smallest >= spec.min_client_records {
            break (props, sizes);
        }
        if attempts >= MAX_PARTITION_ATTEMPTS {
            return Err(Error::Config(format!(
                "no Dirichlet draw in {attempts} attempts gave every client at least {} records",
                spec.min_client_records
            )));
        }
    };
    if attempts > 1 {
        warnings.push(format!(
            "redrew client proportions {} times to reach {} records per client",
            attempts - 1,
            spec.min_client_records
        ));
    }

    let mut clients = vec![Vec::new(); n_clients];
    for (rows, block_sizes) in by_value.into_values().zip(&sizes) {
        let mut rows = rows;
        rows.shuffle(&mut rng);
        let mut start = 0;
        for (client, &size) in block_sizes.iter().enumerate() {
            clients[client].extend_from_slice(&rows[start..start + size]);
            start += size;
        }
    }
    for c in clients.iter_mut() {
        c.sort_unstable();
    }
    Ok(Partition {
        clients,
        values,
        proportions,
        attempts,
        warnings,
    })
}

/// Record-level form of [`dirichlet_partition_indices`].
pub fn dirichlet_partition(records: &[Record], spec: &PartitionSpec) -> Result<Vec<Vec<Record>>> {
    let sensitive: Vec<usize> = records.iter().map(|r| r.sensitive).collect();
    let part = dirichlet_partition_indices(&sensitive, spec)?;
    Ok(part
        .clients
        .into_iter()
        .map(|rows| rows.into_iter().map(|i| records[i].clone()).collect())
        .collect())
}

/// Seeded 70:15:15 split of `0..n`, cut at `round(0.70 n)` and `round(0.85 n)`.
pub fn split_indices(n: usize, seed: u64) -> Result<SplitRows> {
    if n < 3 {
        return Err(Error::Input(format!(
            "a 70:15:15 split needs at least 3 records, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::derived_stream(seed, &[rng::tag::SPLIT]));
    // round half up in integer arithmetic
    let train_end = (70 * n + 50) / 100;
    let val_end = (85 * n + 50) / 100;
    Ok(SplitRows {
        train: order[..train_end].to_vec(),
        validation: order[train_end..val_end].to_vec(),
        test: order[val_end..].to_vec(),
    })
}

/// Item-level form of [`split_indices`].
pub fn split<T: Clone>(items: &[T], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let rows = split_indices(items.len(), seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((pick(&rows.train), pick(&rows.validation), pick(&rows.test)))
}

/// Partitions `records` across clients, then splits each client 70:15:15.
///
/// Every client is guaranteed at least three records (the split minimum); a
/// larger floor comes from `spec.min_client_records`. Split seeds derive from
/// `split_seed` and the client id.
pub fn build_clients(
    records: &[Record],
    spec: &PartitionSpec,
    split_seed: u64,
) -> Result<(Vec<ClientDataset>, Partition)> {
    let dim = records.first().map_or(0, |r| r.features.len());
    let mut spec = spec.clone();
    spec.min_client_records = spec.min_client_records.max(3);
    let sensitive: Vec<usize> = records.iter().map(|r| r.sensitive).collect();
    let part = dirichlet_partition_indices(&sensitive, &spec)?;
    let clients = part
        .clients
        .iter()
        .enumerate()
        .map(|(id, rows)| {
            let local = split_indices(rows.len(), rng::derive_seed(split_seed, &[id as u64]))?;
            let map = |v: Vec<usize>| v.into_iter().map(|i| rows[i]).collect::<Vec<_>>();
            let split = SplitRows {
                train: map(local.train),
                validation: map(local.validation),
                test: map(local.test),
            };
            ClientDataset::from_rows(id, dim, records, split)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((clients, part))
}
