use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

use super::data::DatasetBatch;

/// Writes `contents` to a sibling temporary file, then renames it over
/// `path`, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(contents)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Column names of the wide CSV layout for a dataset shape.
///
/// One row per sample: `y_{t}_{j}` for every step and feature, then `x_{t}`,
/// then `s_{j}` when side information is present, then `c` when utility
/// labels are present. Noise columns `u_{t}_{j}` come last.
pub fn csv_header(
    steps: usize,
    y_dim: usize,
    si_dim: usize,
    has_c: bool,
    u_dim: usize,
) -> Vec<String> {
    let mut cols = Vec::new();
    for t in 0..steps {
        for j in 0..y_dim {
            cols.push(format!("y_{t}_{j}"));
        }
    }
    cols.extend((0..steps).map(|t| format!("x_{t}")));
    cols.extend((0..si_dim).map(|j| format!("s_{j}")));
    if has_c {
        cols.push("c".into());
    }
    for t in 0..steps {
        for j in 0..u_dim {
            cols.push(format!("u_{t}_{j}"));
        }
    }
    cols
}

/// Saves a dataset in the wide layout. Floats are written with the
/// shortest representation that parses back to the same value.
pub fn save_csv(data: &DatasetBatch, path: &Path) -> Result<()> {
    data.validate()?;
    let (nb, nt, ny) = data.y.shape();
    let nu = data.u.features();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(csv_header(nt, ny, data.si_dim(), data.c.is_some(), nu))?;
    for b in 0..nb {
        let mut rec: Vec<String> = data.y.sequence(b).iter().map(f64::to_string).collect();
        rec.extend(data.x[b * nt..(b + 1) * nt].iter().map(usize::to_string));
        if let Some(s) = &data.s {
            rec.extend(s.row(b, 0).iter().map(f64::to_string));
        }
        if let Some(c) = &data.c {
            rec.push(c[b].to_string());
        }
        rec.extend(data.u.sequence(b).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

struct Layout {
    steps: usize,
    y_dim: usize,
    si_dim: usize,
    has_c: bool,
    u_dim: usize,
}

fn parse_layout(header: &csv::StringRecord) -> Result<Layout> {
    let bad = |m: String| Error::Parse {
        line: 1,
        message: m,
    };
    let mut steps = 0;
    let mut y_dim = 0;
    let mut si_dim = 0;
    let mut u_dim = 0;
    let mut has_c = false;
    for col in header {
        let parts: Vec<&str> = col.split('_').collect();
        let idx = |i: usize| -> Result<usize> {
            parts
                .get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(format!("malformed column name {col:?}")))
        };
        match parts[0] {
            "y" => {
                steps = steps.max(idx(1)? + 1);
                y_dim = y_dim.max(idx(2)? + 1);
            }
            "x" => steps = steps.max(idx(1)? + 1),
            "s" => si_dim = si_dim.max(idx(1)? + 1),
            "u" => u_dim = u_dim.max(idx(2)? + 1),
            "c" if parts.len() == 1 => has_c = true,
            _ => return Err(bad(format!("unknown column {col:?}"))),
        }
    }
    let layout = Layout {
        steps,
        y_dim,
        si_dim,
        has_c,
        u_dim,
    };
    let expected = csv_header(steps, y_dim, si_dim, has_c, u_dim);
    if steps == 0 || y_dim == 0 || expected.iter().map(String::as_str).ne(header.iter()) {
        return Err(bad(format!(
            "header does not match the wide layout; expected {}",
            expected.join(",")
        )));
    }
    Ok(layout)
}

/// Loads a dataset written in the wide layout of [`csv_header`].
pub fn load_csv(path: &Path) -> Result<DatasetBatch> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<DatasetBatch> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(Error::Empty("no rows: the file is empty".into())),
        Some(r) => r?,
    };
    let l = parse_layout(&header)?;
    let (mut y, mut x, mut s, mut c, mut u) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut rows = 0;
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let field = |k: usize| rec.get(k).unwrap_or("").trim();
        let float = |k: usize| -> Result<f64> {
            field(k).parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("column {:?}: {:?} is not a number", &header[k], field(k)),
            })
        };
        let int = |k: usize| -> Result<usize> {
            field(k).parse::<usize>().map_err(|_| Error::Parse {
                line,
                message: format!(
                    "column {:?}: {:?} is not a class index",
                    &header[k],
                    field(k)
                ),
            })
        };
        let mut k = 0;
        for _ in 0..l.steps * l.y_dim {
            y.push(float(k)?);
            k += 1;
        }
        for _ in 0..l.steps {
            x.push(int(k)?);
            k += 1;
        }
        for _ in 0..l.si_dim {
            s.push(float(k)?);
            k += 1;
        }
        if l.has_c {
            c.push(int(k)?);
            k += 1;
        }
        for _ in 0..l.steps * l.u_dim {
            u.push(float(k)?);
            k += 1;
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Empty(
            "no rows: the file has a header but no data".into(),
        ));
    }
    let num_private = x.iter().max().map_or(2, |&m| (m + 1).max(2));
    let num_classes = c.iter().max().map_or(0, |&m| m + 1);
    let data = DatasetBatch {
        y: Tensor3::from_vec(rows, l.steps, l.y_dim, y)?,
        x,
        num_private,
        s: if l.si_dim > 0 {
            Some(Tensor3::from_vec(rows, 1, l.si_dim, s)?)
        } else {
            None
        },
        u: Tensor3::from_vec(rows, l.steps, l.u_dim, u)?,
        c: l.has_c.then_some(c),
        num_classes,
    };
    data.validate()?;
    Ok(data)
}
