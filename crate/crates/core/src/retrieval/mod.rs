//! Projected indexes, cross-modal top-K queries and evaluation.

mod metrics;
mod report;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, DocumentFrequencies};
use crate::error::{Error, Result};
use crate::projection::{Modality, ProjectionModel};

pub use metrics::{
    average_precision, dcg, histogram_intersection, map_at_k, ndcg, ndcg_at_k, normalized_histogram,
    precision_scope, temporal_fit, Gain, GradedRanking, MetricSummary, RankedRelevance, ScopePoint,
};
pub use report::{EvalReport, HistogramBin};

/// Rows projected per forward call when building an index.
const CHUNK: usize = 512;

/// Retrieval task: the query modality and the retrieved modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ImageToText,
    TextToImage,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::ImageToText, Direction::TextToImage];

    pub fn query_modality(self) -> Modality {
        match self {
            Direction::ImageToText => Modality::Image,
            Direction::TextToImage => Modality::Text,
        }
    }

    pub fn target_modality(self) -> Modality {
        self.query_modality().other()
    }

    /// Short name used in file names.
    pub fn short(self) -> &'static str {
        match self {
            Direction::ImageToText => "i2t",
            Direction::TextToImage => "t2i",
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::ImageToText => "I->T",
            Direction::TextToImage => "T->I",
        })
    }
}

/// Unit-norm projections of a document set in both modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    image_matrix: Array2<f64>,
    text_matrix: Array2<f64>,
    doc_ids: Vec<String>,
    labels: Vec<BTreeSet<usize>>,
    timestamps: Vec<f64>,
    /// `id_rank[row]` is the row's position in ascending doc-id order.
    id_rank: Vec<usize>,
    span: f64,
}

/// Build an index over every document of `test`.
pub fn build_index(test: &Corpus, model: &ProjectionModel<f64>, freqs: &DocumentFrequencies) -> Result<RetrievalIndex> {
    RetrievalIndex::from_documents(&test.documents, test.time_axis.span, model, freqs)
}

fn project_rows(
    model: &ProjectionModel<f64>,
    modality: Modality,
    docs: &[Document],
    input: impl Fn(&Document) -> Vec<f64>,
) -> Result<Array2<f64>> {
    let net = model.network(modality);
    let mut out = Array2::zeros((docs.len(), net.output_dim()));
    for (c, chunk) in docs.chunks(CHUNK).enumerate() {
        let width = net.input_dim();
        let mut x = Array2::zeros((chunk.len(), width));
        for (r, doc) in chunk.iter().enumerate() {
            let v = input(doc);
            if v.len() != width {
                return Err(Error::Shape {
                    expected: width,
                    actual: v.len(),
                    context: "index input",
                });
            }
            x.row_mut(r).assign(&ArrayView1::from(&v));
        }
        let pass = net.forward_batch(x.view()).map_err(|e| match e {
            Error::DegenerateProjection { context, norm } => {
                let row: usize = context.trim_start_matches("row ").parse().unwrap_or(0);
                Error::DegenerateProjection {
                    context: format!("{modality:?} projection of document `{}`", chunk[row].id),
                    norm,
                }
            }
            other => other,
        })?;
        out.slice_mut(ndarray::s![c * CHUNK..c * CHUNK + chunk.len(), ..])
            .assign(pass.output());
    }
    Ok(out)
}

impl RetrievalIndex {
    /// Project `docs` with both networks. `span` is the time-axis length used
    /// for temporal histograms.
    pub fn from_documents(
        docs: &[Document],
        span: f64,
        model: &ProjectionModel<f64>,
        freqs: &DocumentFrequencies,
    ) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Empty("cannot index an empty document set".into()));
        }
        let image_matrix = project_rows(model, Modality::Image, docs, |d| d.image_feat.clone())?;
        let text_matrix = project_rows(model, Modality::Text, docs, |d| freqs.vectorize(d))?;
        let doc_ids: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.sort_by(|&a, &b| doc_ids[a].cmp(&doc_ids[b]));
        let mut id_rank = vec![0; docs.len()];
        for (rank, &row) in order.iter().enumerate() {
            id_rank[row] = rank;
        }
        Ok(Self {
            image_matrix,
            text_matrix,
            doc_ids,
            labels: docs.iter().map(|d| d.labels.clone()).collect(),
            timestamps: docs.iter().map(|d| d.timestamp).collect(),
            id_rank,
            span,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn matrix(&self, modality: Modality) -> &Array2<f64> {
        match modality {
            Modality::Image => &self.image_matrix,
            Modality::Text => &self.text_matrix,
        }
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn labels(&self) -> &[BTreeSet<usize>] {
        &self.labels
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    /// Descending score, then ascending doc id.
    fn compare(&self, scores: &[f64], a: usize, b: usize) -> Ordering {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(self.id_rank[a].cmp(&self.id_rank[b]))
    }

    /// Rows of the best `k` candidates in rank order.
    fn top_rows(&self, scores: &[f64], k: usize) -> Vec<usize> {
        let mut rows: Vec<usize> = (0..scores.len()).collect();
        let k = k.min(rows.len());
        if k < rows.len() {
            rows.select_nth_unstable_by(k, |&a, &b| self.compare(scores, a, b));
            rows.truncate(k);
        }
        rows.sort_by(|&a, &b| self.compare(scores, a, b));
        rows
    }

    /// Rank the `target` modality against an already projected query vector.
    pub fn rank_projected(&self, query: ArrayView1<f64>, target: Modality, k: usize) -> Result<TopK> {
        if k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        let matrix = self.matrix(target);
        if query.len() != matrix.ncols() {
            return Err(Error::Shape {
                expected: matrix.ncols(),
                actual: query.len(),
                context: "query embedding",
            });
        }
        let scores = matrix.dot(&query).to_vec();
        let rows = self.top_rows(&scores, k);
        Ok(TopK {
            truncated: k > self.len(),
            hits: rows
                .into_iter()
                .map(|row| Hit {
                    doc_id: self.doc_ids[row].clone(),
                    row,
                    score: scores[row],
                    timestamp: self.timestamps[row],
                    labels: self.labels[row].clone(),
                })
                .collect(),
        })
    }
}

/// Query input: exactly one modality.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryInput {
    Image(Vec<f64>),
    /// Vocabulary index to count.
    Text(BTreeMap<usize, u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub input: QueryInput,
    /// Ground truth, for evaluation only.
    pub labels: Option<BTreeSet<usize>>,
    pub timestamp: Option<f64>,
}

impl Query {
    pub fn image(feat: Vec<f64>) -> Self {
        Self {
            input: QueryInput::Image(feat),
            labels: None,
            timestamp: None,
        }
    }

    pub fn text(counts: BTreeMap<usize, u32>) -> Self {
        Self {
            input: QueryInput::Text(counts),
            labels: None,
            timestamp: None,
        }
    }

    pub fn modality(&self) -> Modality {
        match self.input {
            QueryInput::Image(_) => Modality::Image,
            QueryInput::Text(_) => Modality::Text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    pub doc_id: String,
    #[serde(skip)]
    pub row: usize,
    pub score: f64,
    pub timestamp: f64,
    pub labels: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopK {
    pub hits: Vec<Hit>,
    /// Set when K exceeded the number of indexed documents.
    pub truncated: bool,
}

/// Project `q` with its own network and rank the opposite modality.
pub fn query_topk(
    index: &RetrievalIndex,
    model: &ProjectionModel<f64>,
    freqs: &DocumentFrequencies,
    q: &Query,
    k: usize,
) -> Result<TopK> {
    let (modality, input) = match &q.input {
        QueryInput::Image(feat) => (Modality::Image, feat.clone()),
        QueryInput::Text(counts) => {
            if counts.values().all(|&c| c == 0) {
                return Err(Error::Empty("text query has no known tokens".into()));
            }
            (Modality::Text, freqs.vectorize_counts(counts))
        }
    };
    let embedding: Array1<f64> = model.network(modality).project(&input)?;
    index.rank_projected(embedding.view(), modality.other(), k)
}

/// Evaluation settings shared by both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub k: usize,
    pub k_list: Vec<usize>,
    pub bins: usize,
    pub gain: Gain,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: 50,
            k_list: vec![10, 20, 30, 40, 50],
            bins: 10,
            gain: Gain::Linear,
        }
    }
}

/// Per-query rankings of one direction, with every indexed row as a query.
pub struct DirectionRankings {
    pub relevance: Vec<RankedRelevance>,
    pub graded: Vec<GradedRanking>,
    /// Rows of the top candidates for each query.
    pub top: Vec<Vec<usize>>,
}

/// Rank every row against the opposite modality, keeping `depth` results.
pub fn rank_direction(index: &RetrievalIndex, direction: Direction, depth: usize) -> DirectionRankings {
    let queries = index.matrix(direction.query_modality());
    let targets = index.matrix(direction.target_modality());
    let scores = queries.dot(&targets.t());
    let n = index.len();
    let mut out = DirectionRankings {
        relevance: Vec::with_capacity(n),
        graded: Vec::with_capacity(n),
        top: Vec::with_capacity(n),
    };
    for (q, row) in scores.axis_iter(Axis(0)).enumerate() {
        let row = row.to_vec();
        let top = index.top_rows(&row, depth);
        let grade = |c: usize| index.labels[q].intersection(&index.labels[c]).count() as u32;
        let pool: Vec<u32> = (0..n).map(grade).collect();
        let grades: Vec<u32> = top.iter().map(|&c| pool[c]).collect();
        out.relevance.push(RankedRelevance {
            flags: grades.iter().map(|&g| g > 0).collect(),
            total_relevant: pool.iter().filter(|&&g| g > 0).count(),
        });
        out.graded.push(GradedRanking { grades, pool });
        out.top.push(top);
    }
    out
}

/// mAP@K of one direction, treating every indexed row as a query.
pub fn map_for_direction(index: &RetrievalIndex, direction: Direction, k: usize) -> Result<f64> {
    let r = rank_direction(index, direction, k);
    Ok(map_at_k(&r.relevance, k)?.value)
}

/// Full evaluation of one direction over the indexed documents.
pub fn evaluate(index: &RetrievalIndex, direction: Direction, opts: &EvalOptions) -> Result<EvalReport> {
    if opts.bins == 0 {
        return Err(Error::Config("fit_bins must be >= 1".into()));
    }
    let depth = opts.k_list.iter().copied().chain([opts.k]).max().unwrap_or(opts.k);
    let r = rank_direction(index, direction, depth);
    let map = map_at_k(&r.relevance, opts.k)?;
    let ndcg = ndcg_at_k(&r.graded, opts.k, opts.gain)?;
    let scope_curve = precision_scope(&r.relevance, &opts.k_list)?;

    let bins = opts.bins;
    let (mut gt_mass, mut result_mass) = (vec![0.0; bins], vec![0.0; bins]);
    let (mut fit_sum, mut fit_n) = (0.0, 0usize);
    for (q, top) in r.top.iter().enumerate() {
        let relevant = |c: &usize| !index.labels[q].is_disjoint(&index.labels[*c]);
        let gt: Vec<f64> = (0..index.len())
            .filter(relevant)
            .map(|c| index.timestamps[c])
            .collect();
        if gt.is_empty() {
            continue;
        }
        let got: Vec<f64> = top
            .iter()
            .take(opts.k)
            .filter(|c| relevant(c))
            .map(|&c| index.timestamps[c])
            .collect();
        fit_sum += temporal_fit(&got, &gt, 0.0, index.span, bins)?;
        fit_n += 1;
        let p = normalized_histogram(&got, 0.0, index.span, bins);
        let g = normalized_histogram(&gt, 0.0, index.span, bins);
        for b in 0..bins {
            gt_mass[b] += g[b];
            result_mass[b] += p[b];
        }
    }
    let n = fit_n.max(1) as f64;
    let width = index.span / bins as f64;
    let histogram = (0..bins)
        .map(|b| HistogramBin {
            bin_start: b as f64 * width,
            gt_mass: gt_mass[b] / n,
            result_mass: result_mass[b] / n,
        })
        .collect();

    Ok(EvalReport {
        direction,
        k: opts.k,
        map_at_k: map.value,
        ndcg_at_k: ndcg.value,
        scope_curve,
        temporal_fit: fit_sum / n,
        queries: map.evaluated,
        excluded_queries: map.excluded,
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TimeAxis;
    use crate::projection::Dims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn doc(id: &str, feat: Vec<f64>, tokens: &[(usize, u32)], t: f64, labels: &[usize]) -> Document {
        Document {
            id: id.into(),
            image_feat: feat,
            text_counts: tokens.iter().copied().collect(),
            timestamp: t,
            labels: labels.iter().copied().collect(),
        }
    }

    fn toy() -> (Corpus, ProjectionModel<f64>, DocumentFrequencies) {
        let docs = vec![
            doc("c", vec![1.0, 0.0, 0.5], &[(0, 2)], 0.0, &[0]),
            doc("a", vec![0.0, 1.0, 0.1], &[(1, 1), (2, 1)], 1.0, &[1]),
            doc("b", vec![0.3, 0.2, 1.0], &[(2, 3)], 2.0, &[0, 1]),
        ];
        let corpus = Corpus {
            documents: docs,
            vocabulary: vec!["x".into(), "y".into(), "z".into()],
            categories: vec!["p".into(), "q".into()],
            time_axis: TimeAxis::new(86400.0, 0, 2.0).unwrap(),
            d_image: 3,
        };
        let dims = Dims {
            d_image: 3,
            d_text: 3,
            hidden: 5,
            embed: 4,
        };
        let model = ProjectionModel::init(dims, &mut ChaCha8Rng::seed_from_u64(1));
        let freqs = DocumentFrequencies::from_corpus(&corpus);
        (corpus, model, freqs)
    }

    #[test]
    fn rows_are_unit_norm() {
        let (c, m, f) = toy();
        let idx = build_index(&c, &m, &f).unwrap();
        for mat in [idx.matrix(Modality::Image), idx.matrix(Modality::Text)] {
            for row in mat.rows() {
                assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-9);
            }
        }
        assert_eq!(idx.len(), 3);
    }

    #[test]
    fn empty_index_is_an_error() {
        let (c, m, f) = toy();
        let empty = c.with_documents(vec![]);
        assert!(build_index(&empty, &m, &f).is_err());
    }

    #[test]
    fn degenerate_row_names_document() {
        let (c, mut m, f) = toy();
        m.image.w2.fill(0.0);
        m.image.b2.fill(0.0);
        let err = build_index(&c, &m, &f).unwrap_err().to_string();
        assert!(err.contains("`c`"), "{err}");
    }

    #[test]
    fn hand_ordering_and_ties() {
        let (c, m, f) = toy();
        let idx = build_index(&c, &m, &f).unwrap();
        // rows: c, a, b
        assert_eq!(idx.top_rows(&[0.5, 0.1, 0.9], 3), vec![2, 0, 1]);
        // tie between c and a resolves to a (smaller id) first
        assert_eq!(idx.top_rows(&[0.5, 0.5, 0.1], 3), vec![1, 0, 2]);
        assert_eq!(idx.top_rows(&[0.5, 0.5, 0.1], 1), vec![1]);
    }

    #[test]
    fn query_returns_max_dot_product_and_flags_truncation() {
        let (c, m, f) = toy();
        let idx = build_index(&c, &m, &f).unwrap();
        let q = Query::text(c.documents[2].text_counts.clone());
        let res = query_topk(&idx, &m, &f, &q, 10).unwrap();
        assert!(res.truncated);
        assert_eq!(res.hits.len(), 3);
        let qv = idx.matrix(Modality::Text).row(2).to_owned();
        let best = idx
            .matrix(Modality::Image)
            .rows()
            .into_iter()
            .map(|r| r.dot(&qv))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((res.hits[0].score - best).abs() < 1e-12);
        assert!(res.hits.windows(2).all(|w| w[0].score >= w[1].score));
        let one = query_topk(&idx, &m, &f, &q, 1).unwrap();
        assert!(!one.truncated);
        assert_eq!(one.hits.len(), 1);
        assert!(query_topk(&idx, &m, &f, &q, 0).is_err());
        assert!(query_topk(&idx, &m, &f, &Query::text(BTreeMap::new()), 1).is_err());
    }

    #[test]
    fn evaluation_is_bounded_and_reproducible() {
        let (c, m, f) = toy();
        let idx = build_index(&c, &m, &f).unwrap();
        let opts = EvalOptions {
            k: 2,
            k_list: vec![1, 2],
            bins: 2,
            gain: Gain::Linear,
        };
        for dir in Direction::BOTH {
            let a = evaluate(&idx, dir, &opts).unwrap();
            let b = evaluate(&build_index(&c, &m, &f).unwrap(), dir, &opts).unwrap();
            assert_eq!(a, b);
            for v in [a.map_at_k, a.ndcg_at_k, a.temporal_fit] {
                assert!((0.0..=1.0).contains(&v));
            }
            assert_eq!(a.scope_curve.len(), 2);
            assert_eq!(a.queries, 3);
        }
    }
}
