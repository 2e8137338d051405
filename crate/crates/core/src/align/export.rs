//! Output directory of an alignment:
//!
//! ```text
//! trajectory.txt     TUM poses of every node, time order
//! depth/ID.bin       per-node depth ("C3RD")
//! points/ID.ply      per-node world points
//! ```

use std::fs;
use std::path::Path;

use super::Solution;
use crate::error::{Error, Result};
use crate::geometry::{read_tum, write_ply, write_tum, TumPose};
use crate::scene::write_depth;

pub fn export_solution(dir: impl AsRef<Path>, solution: &Solution) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["depth", "points"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let poses: Vec<TumPose> = solution
        .nodes
        .iter()
        .map(|n| TumPose {
            timestamp: n.timestamp,
            pose: n.pose,
        })
        .collect();
    write_tum(dir.join("trajectory.txt"), &poses)?;
    for n in &solution.nodes {
        write_depth(dir.join(format!("depth/{:04}.bin", n.id)), &n.depth)?;
        let pm = solution.world_pointmap(n.id)?;
        write_ply(dir.join(format!("points/{:04}.ply", n.id)), &pm, None)?;
    }
    Ok(())
}

pub fn read_solution_trajectory(dir: impl AsRef<Path>) -> Result<Vec<TumPose>> {
    read_tum(dir.as_ref().join("trajectory.txt"))
}
