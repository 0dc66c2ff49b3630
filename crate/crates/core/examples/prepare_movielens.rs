//! Converts an unpacked MovieLens-1m directory into the loader's CSV format.
//!
//! `cargo run --release --example prepare_movielens -- <ml-1m dir> <out.csv>`
//!
//! Ratings of 4 and 5 become label 1, everything else label 0. Fields, all
//! categorical: movieId, year, genres, userId, gender, age, occupation, zip.
//! `genres` keeps the full pipe-joined genre list as one token.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use autodim::{Error, Result};

/// `::`-separated lines; movies.dat is Latin-1, so bytes are decoded lossily.
fn rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let bytes = fs::read(path).map_err(|source| Error::MissingFile {
        path: path.to_path_buf(),
        source,
    })?;
    let text: String = bytes.iter().map(|&b| b as char).collect();
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split("::").map(str::to_string).collect())
        .collect())
}

fn year_of(title: &str) -> String {
    let t = title.trim();
    match (t.rfind('('), t.ends_with(')')) {
        (Some(open), true) => t[open + 1..t.len() - 1].to_string(),
        _ => "<unknown>".into(),
    }
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let (Some(dir), Some(out)) = (args.next(), args.next()) else {
        return Err(Error::Config("usage: prepare_movielens <ml-1m dir> <out.csv>".into()));
    };
    let dir = Path::new(&dir);
    let mut movies = HashMap::new();
    for r in rows(&dir.join("movies.dat"))? {
        if r.len() != 3 {
            return Err(Error::Parse(format!("movies.dat line {r:?}")));
        }
        movies.insert(r[0].clone(), (year_of(&r[1]), r[2].clone()));
    }
    let mut users = HashMap::new();
    for r in rows(&dir.join("users.dat"))? {
        if r.len() != 5 {
            return Err(Error::Parse(format!("users.dat line {r:?}")));
        }
        users.insert(r[0].clone(), [r[1].clone(), r[2].clone(), r[3].clone(), r[4].clone()]);
    }
    let mut w = csv::Writer::from_writer(BufWriter::new(fs::File::create(&out)?));
    w.write_record([
        "label",
        "movieId:categorical",
        "year:categorical",
        "genres:categorical",
        "userId:categorical",
        "gender:categorical",
        "age:categorical",
        "occupation:categorical",
        "zip:categorical",
    ])?;
    let mut n = 0usize;
    let mut positives = 0usize;
    for r in rows(&dir.join("ratings.dat"))? {
        if r.len() != 4 {
            return Err(Error::Parse(format!("ratings.dat line {r:?}")));
        }
        let rating: u8 = r[2].trim().parse().map_err(|_| Error::Parse(format!("rating `{}`", r[2])))?;
        let label = u8::from(rating >= 4);
        let (year, genres) = movies
            .get(&r[1])
            .ok_or_else(|| Error::Parse(format!("rating for unknown movie {}", r[1])))?;
        let [gender, age, occupation, zip] = users
            .get(&r[0])
            .ok_or_else(|| Error::Parse(format!("rating by unknown user {}", r[0])))?;
        w.write_record([
            label.to_string().as_str(),
            &r[1],
            year,
            genres,
            &r[0],
            gender,
            age,
            occupation,
            zip,
        ])?;
        n += 1;
        positives += usize::from(label);
    }
    w.flush()?;
    w.into_inner()
        .map_err(|e| Error::Io(e.into_error()))?
        .flush()?;
    eprintln!("wrote {n} rows ({positives} positive) to {out}");
    Ok(())
}
