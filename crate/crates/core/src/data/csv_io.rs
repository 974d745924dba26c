use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use super::{DataError, Result, TripRecord};

pub const TRIPS_HEADER: &str = "vehicle_id,start_time,end_time,distance_km";

fn parse_time(field: &str) -> Option<i64> {
    let field = field.trim();
    if let Ok(secs) = field.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(field) {
        return Some(dt.timestamp());
    }
    // zone-less ISO timestamps are read as UTC
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(field, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
}

/// Parses trips CSV from any reader. Records come back sorted by vehicle id,
/// then start time.
pub fn read_trips<R: Read>(reader: R) -> Result<Vec<TripRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => {
            return Err(DataError::Line {
                line: 1,
                message: "empty file".into(),
            })
        }
    };
    let header_line: Vec<&str> = header.iter().collect();
    if header_line.join(",") != TRIPS_HEADER {
        return Err(DataError::Line {
            line: 1,
            message: format!("expected header `{TRIPS_HEADER}`, found `{}`", header_line.join(",")),
        });
    }

    let mut trips = Vec::new();
    for row in records {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |message: String| DataError::Line { line, message };
        if row.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", row.len())));
        }
        let start_time = parse_time(&row[1]).ok_or_else(|| bad(format!("unparseable start_time `{}`", &row[1])))?;
        let end_time = parse_time(&row[2]).ok_or_else(|| bad(format!("unparseable end_time `{}`", &row[2])))?;
        let distance_km: f64 = row[3]
            .parse()
            .map_err(|_| bad(format!("unparseable distance_km `{}`", &row[3])))?;
        let trip = TripRecord {
            vehicle_id: row[0].to_string(),
            start_time,
            end_time,
            distance_km,
        };
        trip.validate().map_err(bad)?;
        trips.push(trip);
    }
    trips.sort_by(|a, b| {
        a.vehicle_id
            .cmp(&b.vehicle_id)
            .then(a.start_time.cmp(&b.start_time))
            .then(a.end_time.cmp(&b.end_time))
    });
    Ok(trips)
}

pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Vec<TripRecord>> {
    read_trips(std::fs::File::open(path)?)
}

/// Writes trips with epoch-second timestamps and millimetre-rounded distances.
pub fn write_trips<W: Write>(writer: W, trips: &[TripRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRIPS_HEADER.split(','))?;
    for t in trips {
        w.write_record([
            t.vehicle_id.clone(),
            t.start_time.to_string(),
            t.end_time.to_string(),
            format!("{:.3}", t.distance_km),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_three_rows() {
        let csv = "vehicle_id,start_time,end_time,distance_km\n\
                   a,100,200,4.5\n\
                   b,50,60,3\n\
                   a,10,20,7.25\n";
        let trips = read_trips(csv.as_bytes()).unwrap();
        assert_eq!(trips.len(), 3);
        assert_eq!(trips[0].vehicle_id, "a");
        assert_eq!(trips[0].start_time, 10);
        assert_eq!(trips[2].vehicle_id, "b");
    }

    #[test]
    fn end_before_start_names_line() {
        let csv = "vehicle_id,start_time,end_time,distance_km\na,100,200,4\na,300,250,4\n";
        let err = read_trips(csv.as_bytes()).unwrap_err();
        match err {
            DataError::Line { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("precedes"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_distance_rejected() {
        let csv = "vehicle_id,start_time,end_time,distance_km\na,1,2,-0.5\n";
        assert!(matches!(
            read_trips(csv.as_bytes()),
            Err(DataError::Line { line: 2, .. })
        ));
    }

    #[test]
    fn iso_and_epoch_mix() {
        let csv = "vehicle_id,start_time,end_time,distance_km\n\
                   a,2024-03-04T08:00:00Z,2024-03-04T08:30:00+00:00,10\n\
                   a,1709542800,1709544600,12\n\
                   a,2024-03-05 08:00:00,2024-03-05T08:45:00,9\n";
        let trips = read_trips(csv.as_bytes()).unwrap();
        assert_eq!(trips[0].start_time, 1_709_539_200);
        assert_eq!(trips[0].end_time, 1_709_541_000);
        assert_eq!(trips[1].start_time, 1_709_542_800);
        assert_eq!(trips[2].start_time, 1_709_539_200 + 86_400);
    }

    #[test]
    fn wrong_header_and_malformed_rows() {
        assert!(read_trips("id,start,end,km\n".as_bytes()).is_err());
        let csv = "vehicle_id,start_time,end_time,distance_km\na,1,2\n";
        assert!(read_trips(csv.as_bytes()).is_err());
        let csv = "vehicle_id,start_time,end_time,distance_km\na,yesterday,2,1\n";
        assert!(matches!(
            read_trips(csv.as_bytes()),
            Err(DataError::Line { line: 2, .. })
        ));
    }

    #[test]
    fn write_then_read() {
        let trips = vec![TripRecord {
            vehicle_id: "v1".into(),
            start_time: 5,
            end_time: 50,
            distance_km: 3.25,
        }];
        let mut buf = Vec::new();
        write_trips(&mut buf, &trips).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            format!("{TRIPS_HEADER}\nv1,5,50,3.250\n")
        );
        assert_eq!(read_trips(buf.as_slice()).unwrap(), trips);
    }
}
