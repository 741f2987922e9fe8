//! Checkpoint files: a header row `layout_version,d,n,kind`, its values, then
//! either `row,col,value` lines for every active weight or one `xi1,xi2` pair.

use std::io::{Read, Write};

use ndarray::Array2;
use onenn::analysis::Predictor;
use onenn::model::{AttentionWeights, DiagonalParams};

use crate::CliError;

pub const LAYOUT_VERSION: u32 = 1;

pub fn write<W: Write>(out: W, model: &Predictor, d: usize, n: usize) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    let kind = match model {
        Predictor::Weights(_) => "weights",
        Predictor::Diag(_) => "diag",
    };
    w.write_record(["layout_version", "d", "n", "kind"])?;
    w.write_record([LAYOUT_VERSION.to_string(), d.to_string(), n.to_string(), kind.to_string()])?;
    match model {
        Predictor::Weights(m) => {
            w.write_record(["row", "col", "value"])?;
            for ((r, c), v) in m.matrix().indexed_iter() {
                if m.is_active(r, c) {
                    w.write_record([r.to_string(), c.to_string(), v.to_string()])?;
                }
            }
        }
        Predictor::Diag(p) => {
            w.write_record(["xi1", "xi2"])?;
            w.write_record([p.xi1.to_string(), p.xi2.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(format!("malformed checkpoint: {}", msg.into()))
}

/// Returns the model and the declared `(d, n)`.
pub fn read<R: Read>(input: R) -> Result<(Predictor, usize, usize), CliError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut records = r.records();
    let mut next = || -> Result<csv::StringRecord, CliError> {
        records.next().ok_or_else(|| bad("file ended early"))?.map_err(CliError::from)
    };
    let header = next()?;
    if header.iter().collect::<Vec<_>>() != ["layout_version", "d", "n", "kind"] {
        return Err(bad("first row must be layout_version,d,n,kind"));
    }
    let meta = next()?;
    let field = |i: usize| meta.get(i).map(str::trim).ok_or_else(|| bad("short header values row"));
    let version: u32 = field(0)?.parse().map_err(|_| bad("layout_version"))?;
    if version != LAYOUT_VERSION {
        return Err(bad(format!("layout_version {version} not supported")));
    }
    let d: usize = field(1)?.parse().map_err(|_| bad("d"))?;
    let n: usize = field(2)?.parse().map_err(|_| bad("n"))?;
    if d < 2 {
        return Err(bad("d must be >= 2"));
    }
    let kind = field(3)?.to_string();
    let cols = next()?;
    let num = |rec: &csv::StringRecord, i: usize| -> Result<f64, CliError> {
        rec.get(i).and_then(|s| s.trim().parse::<f64>().ok()).ok_or_else(|| bad(format!("bad number in column {}", i + 1)))
    };
    let model = match kind.as_str() {
        "weights" => {
            if cols.iter().collect::<Vec<_>>() != ["row", "col", "value"] {
                return Err(bad("weights section must start with row,col,value"));
            }
            let mut m = Array2::zeros((d + 2, d + 2));
            let mut seen = 0;
            for rec in records {
                let rec = rec?;
                let (row, col) = (num(&rec, 0)? as usize, num(&rec, 1)? as usize);
                if row >= d + 2 || col >= d + 2 {
                    return Err(bad(format!("entry ({row}, {col}) outside a {0}x{0} matrix", d + 2)));
                }
                m[[row, col]] = num(&rec, 2)?;
                seen += 1;
            }
            if seen == 0 {
                return Err(bad("no weight entries"));
            }
            Predictor::Weights(AttentionWeights::from_matrix(m).map_err(|e| bad(e.to_string()))?)
        }
        "diag" => {
            if cols.iter().collect::<Vec<_>>() != ["xi1", "xi2"] {
                return Err(bad("diag section must start with xi1,xi2"));
            }
            let rec = records.next().ok_or_else(|| bad("missing xi1,xi2 values"))??;
            Predictor::Diag(DiagonalParams::new(num(&rec, 0)?, num(&rec, 1)?))
        }
        other => return Err(bad(format!("unknown kind '{other}'"))),
    };
    Ok((model, d, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_round_trip() {
        let mut w = AttentionWeights::<f64>::zeros(3);
        w.matrix_mut()[[0, 4]] = 0.25;
        w.matrix_mut()[[4, 4]] = -9.5;
        let model = Predictor::Weights(w);
        let mut buf = Vec::new();
        write(&mut buf, &model, 3, 16).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("layout_version,d,n,kind\n1,3,16,weights\nrow,col,value\n"));
        assert_eq!(read(buf.as_slice()).unwrap(), (model, 3, 16));
    }

    #[test]
    fn diag_round_trip() {
        let model = Predictor::Diag(DiagonalParams::new(50.0, 200.0));
        let mut buf = Vec::new();
        write(&mut buf, &model, 8, 16).unwrap();
        assert_eq!(read(buf.as_slice()).unwrap(), (model, 8, 16));
    }

    #[test]
    fn rejects_malformed() {
        for text in [
            "",
            "layout_version,d,n,kind\n",
            "layout_version,d,n,kind\n2,3,4,diag\nxi1,xi2\n1,2\n",
            "layout_version,d,n,kind\n1,3,4,mystery\n",
            "layout_version,d,n,kind\n1,3,4,diag\nxi1,xi2\n1,x\n",
            "layout_version,d,n,kind\n1,3,4,weights\nrow,col,value\n9,0,1\n",
        ] {
            assert!(matches!(read(text.as_bytes()), Err(CliError::Config(_))), "{text:?}");
        }
    }
}
