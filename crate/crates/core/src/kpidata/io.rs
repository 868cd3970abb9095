use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::generate::RecordLabel;
use super::graph::{CellGraph, CellSite, Edge};
use super::record::{KpiRecord, CSV_HEADER};
use super::KpiError;

pub fn write_records<W: Write>(records: &[KpiRecord], w: W) -> Result<(), KpiError> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(r)?;
    }
    if records.is_empty() {
        wtr.write_record(CSV_HEADER.split(','))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads and validates records. Row numbers in errors count data rows from 1.
pub fn read_records<R: Read>(r: R) -> Result<Vec<KpiRecord>, KpiError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        let missing: Vec<&str> = CSV_HEADER
            .split(',')
            .filter(|c| !header.iter().any(|h| h == c))
            .collect();
        return Err(KpiError::Schema(if missing.is_empty() {
            format!("header must be exactly `{CSV_HEADER}`")
        } else {
            format!("missing column(s): {}", missing.join(", "))
        }));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<KpiRecord>().enumerate() {
        let row_no = i + 1;
        let rec = row.map_err(|e| KpiError::Parse {
            row: row_no,
            message: e.to_string(),
        })?;
        rec.check()
            .map_err(|(field, value, reason)| KpiError::Validation {
                row: row_no,
                field,
                value,
                reason,
            })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn save_csv(records: &[KpiRecord], path: &Path) -> Result<(), KpiError> {
    write_records(records, BufWriter::new(File::create(path)?))
}

pub fn load_csv(path: &Path) -> Result<Vec<KpiRecord>, KpiError> {
    read_records(BufReader::new(File::open(path)?))
}

/// Writer whose header is written explicitly, so empty files still get one.
fn headerless(path: &Path) -> Result<csv::Writer<File>, KpiError> {
    Ok(csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?)
}

/// Writes `cell_id,x_km,y_km` and `cell_a,cell_b` files.
pub fn save_graph(graph: &CellGraph, nodes: &Path, edges: &Path) -> Result<(), KpiError> {
    let mut wtr = csv::Writer::from_path(nodes)?;
    for c in graph.cells() {
        wtr.serialize(c)?;
    }
    wtr.flush()?;
    let mut wtr = headerless(edges)?;
    wtr.write_record(["cell_a", "cell_b"])?;
    for e in graph.edges() {
        wtr.serialize(e)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn load_graph(nodes: &Path, edges: &Path) -> Result<CellGraph, KpiError> {
    let cells = csv::Reader::from_path(nodes)?
        .deserialize::<CellSite>()
        .collect::<Result<Vec<_>, _>>()?;
    let edges = csv::Reader::from_path(edges)?
        .deserialize::<Edge>()
        .map(|e| e.map(|e| (e.cell_a, e.cell_b)))
        .collect::<Result<Vec<_>, _>>()?;
    CellGraph::new(cells, &edges)
}

/// `timestamp,cell_id,anomaly`
pub fn save_labels(labels: &[RecordLabel], path: &Path) -> Result<(), KpiError> {
    let mut wtr = headerless(path)?;
    wtr.write_record(["timestamp", "cell_id", "anomaly"])?;
    for l in labels {
        wtr.serialize(l)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn load_labels(path: &Path) -> Result<Vec<RecordLabel>, KpiError> {
    Ok(csv::Reader::from_path(path)?
        .deserialize::<RecordLabel>()
        .collect::<Result<Vec<_>, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROW: &str = "1677628800,3,7,1000,0.5,4,10,-90,12,15,12,0,1,3.2";

    #[test]
    fn header_only_is_empty() {
        let text = format!("{CSV_HEADER}\n");
        assert!(read_records(text.as_bytes()).unwrap().is_empty());
        let mut buf = Vec::new();
        write_records(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn out_of_range_names_row_and_field() {
        let bad = ROW.replace(",0.5,", ",1.2,");
        let text = format!("{CSV_HEADER}\n{ROW}\n{bad}\n");
        match read_records(text.as_bytes()) {
            Err(KpiError::Validation { row, field, .. }) => {
                assert_eq!((row, field), (2, "prb_util_dl"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_and_schema_errors() {
        let text =
            format!("{CSV_HEADER}\n{ROW}\n1677628800,3,7,abc,0.5,4,10,-90,12,15,12,0,1,3.2\n");
        assert!(matches!(
            read_records(text.as_bytes()),
            Err(KpiError::Parse { row: 2, .. })
        ));
        let no_cqi = CSV_HEADER.replace(",avg_cqi", "");
        let text = format!("{no_cqi}\n");
        match read_records(text.as_bytes()) {
            Err(KpiError::Schema(m)) => assert!(m.contains("avg_cqi")),
            other => panic!("{other:?}"),
        }
        let misaligned = ROW.replacen("1677628800", "1677628801", 1);
        let text = format!("{CSV_HEADER}\n{misaligned}\n");
        assert!(matches!(
            read_records(text.as_bytes()),
            Err(KpiError::Validation {
                field: "timestamp",
                ..
            })
        ));
    }

    #[test]
    fn labels_round_trip() {
        let labels = vec![
            RecordLabel {
                timestamp: 1677628800,
                cell_id: 3,
                anomaly: 0,
            },
            RecordLabel {
                timestamp: 1677629700,
                cell_id: 11,
                anomaly: 1,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        save_labels(&labels, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("timestamp,cell_id,anomaly\n"));
        assert_eq!(load_labels(&path).unwrap(), labels);
    }
}
