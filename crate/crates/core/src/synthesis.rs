//! Sort the Gaussian draws, cut them into four bands by region size, and
//! scatter each band over its region at random.

use crate::error::{Error, Result};
use crate::model::{GaussianVector, GrayImage, Region, RegionPartition};
use crate::randomness::{gaussian_vector, shuffle_in_place, RngStream};

/// Contiguous slices of the descending-sorted draws, in fill order:
/// outside, inside-boundary, outside-boundary, inside.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedSplit {
    parts: [Vec<f32>; 4],
}

impl SortedSplit {
    /// Values destined for `region`, in descending order.
    pub fn part(&self, region: Region) -> &[f32] {
        let slot = Region::FILL_ORDER
            .iter()
            .position(|&r| r == region)
            .expect("every region has a fill slot");
        &self.parts[slot]
    }

    /// Parts in fill order (the numbering used by the split).
    pub fn parts(&self) -> &[Vec<f32>; 4] {
        &self.parts
    }

    pub fn sizes(&self) -> [usize; 4] {
        let mut sizes = [0; 4];
        for r in Region::ALL {
            sizes[r.index()] = self.part(r).len();
        }
        sizes
    }
}

pub fn split_sorted(gv: &GaussianVector, partition: &RegionPartition) -> Result<SortedSplit> {
    split_values(gv.sorted_desc(), partition)
}

/// [`split_sorted`] over any descending-sorted slice whose length matches the grid.
pub fn split_values(sorted: &[f32], partition: &RegionPartition) -> Result<SortedSplit> {
    let total = partition.width() * partition.height();
    if sorted.len() != total {
        return Err(Error::Structural(format!(
            "partition covers {total} positions but the vector has {} values",
            sorted.len()
        )));
    }
    if sorted.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Structural("values are not sorted in descending order".into()));
    }
    let mut start = 0;
    let parts = Region::FILL_ORDER.map(|r| {
        let end = start + partition.size(r);
        let part = sorted[start..end].to_vec();
        start = end;
        part
    });
    Ok(SortedSplit { parts })
}

/// Writes every region's values onto a shuffled copy of its row-major
/// positions. Regions consume the stream in fill order, one shuffle each.
pub fn place(split: &SortedSplit, partition: &RegionPartition, stream: &mut RngStream) -> Result<GrayImage> {
    if split.sizes() != partition.region_sizes() {
        return Err(Error::Structural(format!(
            "split sizes {:?} do not match partition sizes {:?}",
            split.sizes(),
            partition.region_sizes()
        )));
    }
    let mut pixels = vec![f32::NAN; partition.width() * partition.height()];
    for region in Region::FILL_ORDER {
        let mut positions = partition.positions(region);
        shuffle_in_place(stream, &mut positions);
        for (&pos, &value) in positions.iter().zip(split.part(region)) {
            pixels[pos] = value;
        }
    }
    GrayImage::new(partition.width(), partition.height(), pixels)
}

/// One synthetic image: draw, sort, split, place. Also returns the draws.
pub fn synthesize_image(
    partition: &RegionPartition,
    stream: &mut RngStream,
    variance: f64,
) -> Result<(GrayImage, GaussianVector)> {
    let gv = gaussian_vector(stream, variance)?;
    let split = split_sorted(&gv, partition)?;
    let image = place(&split, partition, stream)?;
    Ok((image, gv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::partition_from_labels;
    use crate::randomness::derive_stream;

    fn one_each_2x2() -> RegionPartition {
        partition_from_labels(
            vec![Region::Outside, Region::OutsideBoundary, Region::InsideBoundary, Region::Inside],
            2,
            2,
        )
        .unwrap()
    }

    #[test]
    fn two_by_two_forced_assignment() {
        let sorted = crate::model::sort_desc(&[3.0, -1.0, 2.0, 0.0]);
        let p = one_each_2x2();
        let split = split_values(&sorted, &p).unwrap();
        assert_eq!(split.parts(), &[vec![3.0], vec![2.0], vec![0.0], vec![-1.0]]);
        let img = place(&split, &p, &mut derive_stream(0, 0)).unwrap();
        // labels: outside, outside-boundary, inside-boundary, inside
        assert_eq!(img.values(), &[3.0, 0.0, 2.0, -1.0]);
    }

    #[test]
    fn split_rejects_size_mismatch() {
        let mut s = derive_stream(4, 4);
        let gv = gaussian_vector(&mut s, 1024.0).unwrap();
        assert!(matches!(split_sorted(&gv, &one_each_2x2()), Err(Error::Structural(_))));
        assert!(split_values(&[1.0, 2.0, 0.0, 0.0], &one_each_2x2()).is_err());
    }

    #[test]
    fn degenerate_split() {
        let mut s = derive_stream(1, 2);
        let gv = gaussian_vector(&mut s, 1024.0).unwrap();
        let p = partition_from_labels(vec![Region::Outside; 1024], 32, 32).unwrap();
        let split = split_sorted(&gv, &p).unwrap();
        assert_eq!(split.part(Region::Outside), gv.sorted_desc());
        for r in [Region::InsideBoundary, Region::OutsideBoundary, Region::Inside] {
            assert!(split.part(r).is_empty());
        }
    }

    #[test]
    fn place_rejects_mismatched_split() {
        let mut s = derive_stream(1, 2);
        let gv = gaussian_vector(&mut s, 1024.0).unwrap();
        let all_out = partition_from_labels(vec![Region::Outside; 1024], 32, 32).unwrap();
        let mut labels = vec![Region::Outside; 1024];
        labels[0] = Region::Inside;
        let other = partition_from_labels(labels, 32, 32).unwrap();
        let split = split_sorted(&gv, &all_out).unwrap();
        assert!(place(&split, &other, &mut s).is_err());
    }

    #[test]
    fn same_stream_same_image() {
        let mut labels = vec![Region::Outside; 1024];
        for i in 300..340 {
            labels[i] = Region::Inside;
        }
        let p = partition_from_labels(labels, 32, 32).unwrap();
        let a = synthesize_image(&p, &mut derive_stream(9, 9), 1024.0).unwrap();
        let b = synthesize_image(&p, &mut derive_stream(9, 9), 1024.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.width(), 32);
        assert_eq!(a.0.values().len(), 1024);
    }
}
