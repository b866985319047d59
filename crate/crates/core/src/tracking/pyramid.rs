use super::image::Image;

/// Gaussian pyramid. Level 0 is the source.
#[derive(Debug, Clone)]
pub struct ImagePyramid {
    pub levels: Vec<Image>,
}

impl ImagePyramid {
    /// Builds `num_levels` levels (at least one), stopping early if a level
    /// would become smaller than 8 pixels on a side.
    pub fn new(image: Image, num_levels: usize) -> Self {
        let mut levels = vec![image];
        while levels.len() < num_levels.max(1) {
            let last = levels.last().expect("non-empty");
            if last.width() < 16 || last.height() < 16 {
                break;
            }
            levels.push(last.pyr_down());
        }
        Self { levels }
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn base(&self) -> &Image {
        &self.levels[0]
    }
}
