//! Binary checkpoint of a trained model.
//!
//! Layout, little-endian:
//!
//! ```text
//! "TXNM" | u32 version
//! u32 d_image | u32 d_text | u32 hidden | u32 embed
//! image w1 (hidden x d_image) | image b1 | image w2 (embed x hidden) | image b2
//! text  w1 (hidden x d_text)  | text  b1 | text  w2 (embed x hidden) | text  b2
//!     every tensor as f64, row-major
//! u64 seed
//! u32 length | UTF-8 config snapshot
//! u64 training document count | u32 d_text | d_text x u32 document frequencies
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Dims, Network, ProjectionModel};
use crate::codec::{Reader, Writer};
use crate::corpus::DocumentFrequencies;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TXNM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ProjectionModel<f64>,
    pub seed: u64,
    /// Flat `key = value` configuration the model was trained with.
    pub config: String,
    /// Training-split document frequencies used to vectorize text.
    pub frequencies: DocumentFrequencies,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(Vec::new());
        self.write_to(&mut w).expect("writing to memory");
        w.into_inner()
    }

    fn write_to<W: Write>(&self, w: &mut Writer<W>) -> std::io::Result<()> {
        let dims = self.model.dims();
        w.bytes(CHECKPOINT_MAGIC)?;
        w.u32(CHECKPOINT_VERSION)?;
        for d in [dims.d_image, dims.d_text, dims.hidden, dims.embed] {
            w.u32(d as u32)?;
        }
        for t in self.model.tensors() {
            w.f64s(t)?;
        }
        w.u64(self.seed)?;
        w.string(&self.config)?;
        w.u64(self.frequencies.num_docs as u64)?;
        w.u32(self.frequencies.df.len() as u32)?;
        for &df in &self.frequencies.df {
            w.u32(df)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Writer::new(BufWriter::new(file));
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.into_inner().flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read(bytes)
    }

    fn read<R: std::io::Read>(inner: R) -> Result<Self> {
        let mut r = Reader::new(inner, "checkpoint");
        r.magic(CHECKPOINT_MAGIC)?;
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                kind: "checkpoint",
                message: format!("unsupported version {version}"),
            });
        }
        let dims = Dims {
            d_image: r.u32("d_image")? as usize,
            d_text: r.u32("d_text")? as usize,
            hidden: r.u32("hidden")? as usize,
            embed: r.u32("embed")? as usize,
        };
        let image = read_network(&mut r, dims.d_image, dims.hidden, dims.embed)?;
        let text = read_network(&mut r, dims.d_text, dims.hidden, dims.embed)?;
        let model = ProjectionModel { image, text };
        if !model.all_finite() {
            return Err(Error::Format {
                kind: "checkpoint",
                message: "non-finite parameter".into(),
            });
        }
        let seed = r.u64("seed")?;
        let config = r.string("config snapshot")?;
        let num_docs = r.u64("document count")? as usize;
        let n = r.u32("frequency table length")? as usize;
        let df = (0..n).map(|_| r.u32("document frequency")).collect::<Result<_>>()?;
        r.finish()?;
        Ok(Self {
            model,
            seed,
            config,
            frequencies: DocumentFrequencies { num_docs, df },
        })
    }
}

fn read_network<R: std::io::Read>(
    r: &mut Reader<R>,
    input: usize,
    hidden: usize,
    embed: usize,
) -> Result<Network<f64>> {
    let shape_err = |_| Error::Format {
        kind: "checkpoint",
        message: "tensor shape".into(),
    };
    let w1 = Array2::from_shape_vec((hidden, input), r.f64s(hidden * input, "w1")?)
        .map_err(shape_err)?;
    let b1 = Array1::from(r.f64s(hidden, "b1")?);
    let w2 = Array2::from_shape_vec((embed, hidden), r.f64s(embed * hidden, "w2")?)
        .map_err(shape_err)?;
    let b2 = Array1::from(r.f64s(embed, "b2")?);
    Ok(Network { w1, b1, w2, b2 })
}
