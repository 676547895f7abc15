//! Dataset container and CSV export.
//!
//! Layout (little-endian): `"OEQD"`, version `u32`, flags `u32`, config
//! digest `[u8; 32]`, symbol rate `f64`, constellation order `u32`, record
//! count `u64`, training-record count `u64`, then one record of eight `f64`
//! per symbol: `tx_x (re, im), tx_y (re, im), rx_x (re, im), rx_y (re, im)`.
//!
//! With [`FLAG_LABELS`] set the file is a teacher label store: `tx` holds the
//! ground truth of every target symbol and `rx` the teacher predictions.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::{SymbolFrame, C64};

const MAGIC: &[u8; 4] = b"OEQD";
const VERSION: u32 = 1;
pub const FLAG_LABELS: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub flags: u32,
    pub config_digest: [u8; 32],
    pub symbol_rate: f64,
    pub order: u32,
    pub length: u64,
    /// Leading records that belong to the training split; the rest is test
    /// data.
    pub train_length: u64,
}

impl DatasetHeader {
    pub fn is_label_store(&self) -> bool {
        self.flags & FLAG_LABELS != 0
    }
}

/// Training and test frames of one launch power, or a label store.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub train: SymbolFrame,
    pub test: SymbolFrame,
}

fn concat(a: &SymbolFrame, b: &SymbolFrame) -> [Vec<C64>; 4] {
    let j = |x: &[C64], y: &[C64]| x.iter().chain(y).copied().collect::<Vec<_>>();
    [
        j(&a.tx_symbols_x, &b.tx_symbols_x),
        j(&a.tx_symbols_y, &b.tx_symbols_y),
        j(&a.rx_symbols_x, &b.rx_symbols_x),
        j(&a.rx_symbols_y, &b.rx_symbols_y),
    ]
}

impl Dataset {
    pub fn new(train: SymbolFrame, test: SymbolFrame, order: u32, config_digest: [u8; 32], flags: u32) -> Self {
        let header = DatasetHeader {
            flags,
            config_digest,
            symbol_rate: train.symbol_rate,
            order,
            length: (train.len() + test.len()) as u64,
            train_length: train.len() as u64,
        };
        Self { header, train, test }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let h = &self.header;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&h.flags.to_le_bytes())?;
        w.write_all(&h.config_digest)?;
        w.write_all(&h.symbol_rate.to_le_bytes())?;
        w.write_all(&h.order.to_le_bytes())?;
        w.write_all(&h.length.to_le_bytes())?;
        w.write_all(&h.train_length.to_le_bytes())?;
        let cols = concat(&self.train, &self.test);
        for i in 0..cols[0].len() {
            for c in &cols {
                w.write_all(&c[i].re.to_le_bytes())?;
                w.write_all(&c[i].im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let header = read_header(r)?;
        let DatasetHeader {
            symbol_rate,
            length,
            train_length,
            ..
        } = header;
        let n = length as usize;
        let mut raw = vec![0u8; n * 64];
        r.read_exact(&mut raw)?;
        let v: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let col = |k: usize, range: std::ops::Range<usize>| -> Vec<C64> {
            range.map(|i| C64::new(v[i * 8 + 2 * k], v[i * 8 + 2 * k + 1])).collect()
        };
        let split = train_length as usize;
        let frame = |range: std::ops::Range<usize>| {
            SymbolFrame::new(
                col(0, range.clone()),
                col(1, range.clone()),
                col(2, range.clone()),
                col(3, range),
                symbol_rate,
            )
        };
        Ok(Self {
            header,
            train: frame(0..split)?,
            test: frame(split..n)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(std::fs::File::open(path)?))
    }

    /// Reads only the header.
    pub fn peek_header(path: &Path) -> Result<DatasetHeader> {
        read_header(&mut BufReader::new(std::fs::File::open(path)?))
    }

    /// One CSV row per record, with a digest comment line.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# config_digest: {}", hex::encode(self.header.config_digest))?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record([
            "split", "tx_x_re", "tx_x_im", "tx_y_re", "tx_y_im", "rx_x_re", "rx_x_im", "rx_y_re", "rx_y_im",
        ])?;
        for (split, frame) in [("train", &self.train), ("test", &self.test)] {
            for i in 0..frame.len() {
                let mut rec = vec![split.to_string()];
                for s in [
                    frame.tx_symbols_x[i],
                    frame.tx_symbols_y[i],
                    frame.rx_symbols_x[i],
                    frame.rx_symbols_y[i],
                ] {
                    rec.push(s.re.to_string());
                    rec.push(s.im.to_string());
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn read_header(r: &mut impl Read) -> Result<DatasetHeader> {
    let magic: [u8; 4] = take(r)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a dataset container (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let h = DatasetHeader {
        flags: u32::from_le_bytes(take(r)?),
        config_digest: take(r)?,
        symbol_rate: f64::from_le_bytes(take(r)?),
        order: u32::from_le_bytes(take(r)?),
        length: u64::from_le_bytes(take(r)?),
        train_length: u64::from_le_bytes(take(r)?),
    };
    if h.train_length > h.length {
        return Err(Error::Format(format!(
            "training split {} exceeds {} records",
            h.train_length, h.length
        )));
    }
    Ok(h)
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}
