use std::path::{Path, PathBuf};

use sdmforge_core::geometry::Axis;
use sdmforge_core::io::{read_raw, read_vtk, write_raw, write_vtk};
use sdmforge_core::surrogate::{load_model, ModelFile};
use sdmforge_core::ScalarGrid;

use crate::CliError;

/// Files written for one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPaths {
    pub vtk: PathBuf,
    pub raw: PathBuf,
    pub sidecar: PathBuf,
}

/// `out` without a grid-file extension.
pub fn grid_stem(out: &Path) -> PathBuf {
    match out.extension().and_then(|e| e.to_str()) {
        Some("vtk" | "raw" | "json") => out.with_extension(""),
        _ => out.to_path_buf(),
    }
}

pub fn grid_paths(out: &Path) -> GridPaths {
    let stem = grid_stem(out);
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    GridPaths {
        vtk: with("vtk"),
        raw: with("raw"),
        sidecar: with("json"),
    }
}

/// Writes `grid` as legacy VTK and as raw payload plus sidecar.
pub fn write_grid_files(
    grid: &ScalarGrid,
    out: &Path,
    clamp: Option<(f32, f32)>,
    title: &str,
) -> Result<GridPaths, CliError> {
    let paths = grid_paths(out);
    if let Some(dir) = paths.vtk.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_vtk(grid, &paths.vtk, title)?;
    write_raw(grid, &paths.raw, clamp)?;
    Ok(paths)
}

/// Reads a `.vtk` file, or a raw payload given by its `.raw` or `.json` path.
pub fn read_grid(path: &Path) -> Result<ScalarGrid, CliError> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(format!("{} does not exist", path.display())));
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("vtk") => Ok(read_vtk(path)?),
        _ => Ok(read_raw(&path.with_extension("raw"))?.0),
    }
}

pub fn read_model(path: &Path) -> Result<ModelFile, CliError> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(format!(
            "model {} does not exist; run `sdmforge init` and `sdmforge train` first",
            path.display()
        )));
    }
    Ok(load_model(path)?)
}

/// Parses `axis:index`, e.g. `z:30`.
pub fn parse_slice(s: &str) -> Result<(Axis, usize), CliError> {
    let (axis, index) = s
        .split_once(':')
        .ok_or_else(|| CliError::Usage(format!("slice `{s}` is not of the form axis:index")))?;
    let axis = axis.parse::<Axis>()?;
    let index = index
        .parse::<usize>()
        .map_err(|_| CliError::Usage(format!("slice index `{index}` is not a non-negative integer")))?;
    Ok((axis, index))
}

pub fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_drop_grid_extensions() {
        assert_eq!(grid_stem(Path::new("out/s1.vtk")), PathBuf::from("out/s1"));
        assert_eq!(grid_stem(Path::new("out/s1")), PathBuf::from("out/s1"));
        let p = grid_paths(Path::new("out/s1.v2"));
        assert_eq!(p.raw, PathBuf::from("out/s1.v2.raw"));
        assert_eq!(p.sidecar, PathBuf::from("out/s1.v2.json"));
    }

    #[test]
    fn slices_parse() {
        assert_eq!(parse_slice("z:30").unwrap(), (Axis::Z, 30));
        assert!(parse_slice("z30").is_err());
        assert!(parse_slice("w:3").is_err());
        assert!(parse_slice("x:-1").is_err());
    }
}
