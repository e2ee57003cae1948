//! Semantic label grids and their connected components.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

/// Class id reserved for pixels without a label.
///
/// Void pixels never form components and are excluded from every statistic.
pub const VOID_ID: u8 = 255;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MapError {
    #[error("label map must be non-empty, got {width}x{height}")]
    Empty { width: u32, height: u32 },
    #[error("grid has {actual} values but {width}x{height} needs {expected}")]
    LengthMismatch {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("unknown class id {value} at ({x}, {y})")]
    UnknownClass { x: u32, y: u32, value: u8 },
    #[error("map is {width}x{height}, smaller than the {ratio_w}:{ratio_h} crop ratio")]
    TooSmallForCrop {
        width: u32,
        height: u32,
        ratio_w: u32,
        ratio_h: u32,
    },
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: u32,
        left_h: u32,
        right_w: u32,
        right_h: u32,
    },
}

/// A rectangular, row-major grid of class ids.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SemanticMap {
    width: u32,
    height: u32,
    classes: Vec<u8>,
}

impl core::fmt::Debug for SemanticMap {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        writeln!(f, "SemanticMap {}x{}", self.width, self.height)?;
        for row in self.classes.chunks(self.width as usize) {
            for v in row {
                if *v == VOID_ID {
                    f.write_str("  .")?;
                } else {
                    write!(f, "{v:>3}")?;
                }
            }
            f.write_str("\n")?;
        }
        Ok(())
    }
}

impl SemanticMap {
    pub fn new(width: u32, height: u32, classes: Vec<u8>) -> Result<Self, MapError> {
        if width == 0 || height == 0 {
            return Err(MapError::Empty { width, height });
        }
        let expected = width as usize * height as usize;
        if classes.len() != expected {
            return Err(MapError::LengthMismatch {
                width,
                height,
                expected,
                actual: classes.len(),
            });
        }
        Ok(Self {
            width,
            height,
            classes,
        })
    }

    pub fn filled(width: u32, height: u32, class_id: u8) -> Result<Self, MapError> {
        Self::new(width, height, vec![class_id; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn void_id(&self) -> u8 {
        VOID_ID
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Row-major class ids.
    pub fn as_slice(&self) -> &[u8] {
        &self.classes
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.classes
    }

    pub fn get(&self, x: u32, y: u32) -> Option<u8> {
        if x < self.width && y < self.height {
            Some(self.classes[self.index(x, y)])
        } else {
            None
        }
    }

    pub fn set(&mut self, x: u32, y: u32, class_id: u8) {
        let i = self.index(x, y);
        self.classes[i] = class_id;
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (u32, u32) {
        let w = self.width as usize;
        ((index % w) as u32, (index / w) as u32)
    }

    /// Pixel counts per class id, void included at index 255.
    pub fn histogram(&self) -> [u64; 256] {
        let mut hist = [0u64; 256];
        for &v in &self.classes {
            hist[v as usize] += 1;
        }
        hist
    }

    pub fn non_void_count(&self) -> usize {
        self.classes.iter().filter(|&&v| v != VOID_ID).count()
    }

    /// Checks that every value is void or below `num_classes`.
    pub fn validate(&self, num_classes: usize) -> Result<(), MapError> {
        match self
            .classes
            .iter()
            .position(|&v| v != VOID_ID && v as usize >= num_classes)
        {
            Some(i) => {
                let (x, y) = self.coords(i);
                Err(MapError::UnknownClass {
                    x,
                    y,
                    value: self.classes[i],
                })
            }
            None => Ok(()),
        }
    }

    pub fn ensure_same_dimensions(&self, other: &SemanticMap) -> Result<(), MapError> {
        if self.dimensions() != other.dimensions() {
            return Err(MapError::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            });
        }
        Ok(())
    }

    /// Copies out the `w`x`h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> Result<SemanticMap, MapError> {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut out = Vec::with_capacity(w as usize * h as usize);
        for y in y0..y0 + h {
            let start = self.index(x0, y);
            out.extend_from_slice(&self.classes[start..start + w as usize]);
        }
        SemanticMap::new(w, h, out)
    }
}

/// Pixel neighbourhood used when grouping pixels into components. Serialized
/// as its neighbour count, 4 or 8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "u32", into = "u32"))]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl TryFrom<u32> for Connectivity {
    type Error = alloc::string::String;

    fn try_from(n: u32) -> Result<Self, Self::Error> {
        Self::from_neighbours(n).ok_or_else(|| alloc::format!("connectivity must be 4 or 8, got {n}"))
    }
}

impl From<Connectivity> for u32 {
    fn from(c: Connectivity) -> u32 {
        c.neighbours()
    }
}

impl Connectivity {
    pub fn from_neighbours(n: u32) -> Option<Self> {
        match n {
            4 => Some(Self::Four),
            8 => Some(Self::Eight),
            _ => None,
        }
    }

    pub fn neighbours(self) -> u32 {
        match self {
            Self::Four => 4,
            Self::Eight => 8,
        }
    }

    fn offsets(self) -> &'static [(i32, i32)] {
        const FOUR: [(i32, i32); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
        const EIGHT: [(i32, i32); 8] = [
            (-1, -1),
            (0, -1),
            (1, -1),
            (-1, 0),
            (1, 0),
            (-1, 1),
            (0, 1),
            (1, 1),
        ];
        match self {
            Self::Four => &FOUR,
            Self::Eight => &EIGHT,
        }
    }
}

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BBox {
    pub min_x: u32,
    pub min_y: u32,
    pub max_x: u32,
    pub max_y: u32,
}

impl BBox {
    pub fn width(&self) -> u32 {
        self.max_x - self.min_x + 1
    }

    pub fn height(&self) -> u32 {
        self.max_y - self.min_y + 1
    }
}

/// A maximal same-class connected region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub component_id: usize,
    pub class_id: u8,
    /// Row-major pixel indices into the source map, ascending.
    pub pixels: Vec<u32>,
    pub bbox: BBox,
    source: (u32, u32),
}

impl Component {
    pub fn size(&self) -> usize {
        self.pixels.len()
    }

    /// Dimensions of the map the component was extracted from.
    pub fn source_dimensions(&self) -> (u32, u32) {
        self.source
    }

    /// `(x, y)` coordinates of the component's pixels in scanline order.
    pub fn coords(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.source.0;
        self.pixels.iter().map(move |&i| (i % w, i / w))
    }
}

/// The decomposition of a map's non-void pixels into components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentSet {
    pub components: Vec<Component>,
    pub connectivity: Connectivity,
    pub width: u32,
    pub height: u32,
}

impl ComponentSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Component> {
        self.components.iter()
    }
}

/// Partitions the non-void pixels of `map` into maximal same-class regions.
///
/// Components are numbered in scanline order of their first pixel.
pub fn connected_components(map: &SemanticMap, connectivity: Connectivity) -> ComponentSet {
    const UNVISITED: u32 = u32::MAX;
    let (w, h) = (map.width as i32, map.height as i32);
    let data = map.as_slice();
    let mut owner = vec![UNVISITED; data.len()];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..data.len() {
        let class_id = data[start];
        if class_id == VOID_ID || owner[start] != UNVISITED {
            continue;
        }
        let component_id = components.len();
        owner[start] = component_id as u32;
        queue.push_back(start);
        let mut pixels = Vec::new();
        let (sx, sy) = map.coords(start);
        let mut bbox = BBox {
            min_x: sx,
            min_y: sy,
            max_x: sx,
            max_y: sy,
        };

        while let Some(i) = queue.pop_front() {
            pixels.push(i as u32);
            let (x, y) = map.coords(i);
            bbox.min_x = bbox.min_x.min(x);
            bbox.max_x = bbox.max_x.max(x);
            bbox.min_y = bbox.min_y.min(y);
            bbox.max_y = bbox.max_y.max(y);
            for &(dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x as i32 + dx, y as i32 + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let j = ny as usize * w as usize + nx as usize;
                if owner[j] == UNVISITED && data[j] == class_id {
                    owner[j] = component_id as u32;
                    queue.push_back(j);
                }
            }
        }

        pixels.sort_unstable();
        components.push(Component {
            component_id,
            class_id,
            pixels,
            bbox,
            source: map.dimensions(),
        });
    }

    ComponentSet {
        components,
        connectivity,
        width: map.width,
        height: map.height,
    }
}

/// Window of the largest centred crop with aspect `ratio_w:ratio_h`.
///
/// Returns `(x0, y0, width, height)`. When the removed margin is odd the
/// extra pixel is taken from the top/left side.
pub fn crop_window(
    width: u32,
    height: u32,
    ratio_w: u32,
    ratio_h: u32,
) -> Result<(u32, u32, u32, u32), MapError> {
    if ratio_w == 0 || ratio_h == 0 || width < ratio_w || height < ratio_h {
        return Err(MapError::TooSmallForCrop {
            width,
            height,
            ratio_w,
            ratio_h,
        });
    }
    let scale = (width / ratio_w).min(height / ratio_h);
    let (cw, ch) = (scale * ratio_w, scale * ratio_h);
    let (rem_x, rem_y) = (width - cw, height - ch);
    Ok((rem_x - rem_x / 2, rem_y - rem_y / 2, cw, ch))
}

/// Largest centred crop of `map` with aspect `ratio_w:ratio_h`.
pub fn center_crop_ratio(
    map: &SemanticMap,
    ratio_w: u32,
    ratio_h: u32,
) -> Result<SemanticMap, MapError> {
    let (x0, y0, w, h) = crop_window(map.width, map.height, ratio_w, ratio_h)?;
    if (w, h) == map.dimensions() {
        return Ok(map.clone());
    }
    map.crop(x0, y0, w, h)
}
