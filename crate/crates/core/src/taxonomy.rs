//! Semantic classes and their motion category.

use std::fmt;

use crate::error::{Error, Result};
use crate::types::Mask;

/// Motion category of a semantic class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    /// Independently moving object, modeled by a localized two-layer model.
    Thing,
    /// Roughly planar background, modeled by a homography.
    Plane,
    /// Everything else; keeps the initial flow.
    Stuff,
}

/// Identifier of a semantic class; `0` is reserved for unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassId(pub u8);

impl ClassId {
    pub const UNKNOWN: ClassId = ClassId(0);
    pub const AEROPLANE: ClassId = ClassId(1);
    pub const BICYCLE: ClassId = ClassId(2);
    pub const BIRD: ClassId = ClassId(3);
    pub const BOAT: ClassId = ClassId(4);
    pub const BUS: ClassId = ClassId(5);
    pub const CAR: ClassId = ClassId(6);
    pub const CAT: ClassId = ClassId(7);
    pub const COW: ClassId = ClassId(8);
    pub const DOG: ClassId = ClassId(9);
    pub const HORSE: ClassId = ClassId(10);
    pub const MOTORBIKE: ClassId = ClassId(11);
    pub const SHEEP: ClassId = ClassId(12);
    pub const TRAIN: ClassId = ClassId(13);
    pub const PERSON: ClassId = ClassId(14);
    pub const ROAD: ClassId = ClassId(15);
    pub const SKY: ClassId = ClassId(16);
    pub const WATER: ClassId = ClassId(17);
    pub const BUILDING: ClassId = ClassId(18);
    pub const VEGETATION: ClassId = ClassId(19);
    pub const GRASS: ClassId = ClassId(20);
    pub const GROUND: ClassId = ClassId(21);
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match DEFAULT_CLASSES.get(self.0 as usize) {
            Some((name, _)) => f.write_str(name),
            None => write!(f, "class#{}", self.0),
        }
    }
}

const DEFAULT_CLASSES: [(&str, Category); 22] = [
    ("unknown", Category::Stuff),
    ("aeroplane", Category::Thing),
    ("bicycle", Category::Thing),
    ("bird", Category::Thing),
    ("boat", Category::Thing),
    ("bus", Category::Thing),
    ("car", Category::Thing),
    ("cat", Category::Thing),
    ("cow", Category::Thing),
    ("dog", Category::Thing),
    ("horse", Category::Thing),
    ("motorbike", Category::Thing),
    ("sheep", Category::Thing),
    ("train", Category::Thing),
    ("person", Category::Thing),
    ("road", Category::Plane),
    ("sky", Category::Plane),
    ("water", Category::Plane),
    ("building", Category::Stuff),
    ("vegetation", Category::Stuff),
    ("grass", Category::Stuff),
    ("ground", Category::Stuff),
];

/// Total mapping from class identifiers to motion categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTaxonomy {
    names: Vec<String>,
    categories: Vec<Category>,
}

impl Default for ClassTaxonomy {
    /// The 22-class taxonomy: unknown, 14 Things, 3 Planes, 4 named Stuff classes.
    fn default() -> Self {
        Self {
            names: DEFAULT_CLASSES.iter().map(|(n, _)| n.to_string()).collect(),
            categories: DEFAULT_CLASSES.iter().map(|(_, c)| *c).collect(),
        }
    }
}

impl ClassTaxonomy {
    /// Builds a custom taxonomy. Index 0 must exist and is treated as unknown.
    pub fn new(classes: Vec<(String, Category)>) -> Result<Self> {
        if classes.is_empty() || classes.len() > 256 {
            return Err(Error::UnsupportedFormat(format!(
                "taxonomy needs 1..=256 classes, got {}",
                classes.len()
            )));
        }
        let (names, categories) = classes.into_iter().unzip();
        Ok(Self { names, categories })
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        (id as usize) < self.categories.len()
    }

    pub fn categorize(&self, id: ClassId) -> Result<Category> {
        self.categories
            .get(id.0 as usize)
            .copied()
            .ok_or(Error::UnknownClass(id.0 as u32))
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.names.get(id.0 as usize).map(String::as_str)
    }

    pub fn class_by_name(&self, name: &str) -> Option<ClassId> {
        self.names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name))
            .map(|i| ClassId(i as u8))
    }

    pub fn classes(&self) -> impl Iterator<Item = (ClassId, Category)> + '_ {
        self.categories
            .iter()
            .enumerate()
            .map(|(i, c)| (ClassId(i as u8), *c))
    }

    pub fn classes_in(&self, category: Category) -> Vec<ClassId> {
        self.classes()
            .filter(|(_, c)| *c == category)
            .map(|(id, _)| id)
            .collect()
    }
}

/// Convenience wrapper for the default taxonomy.
pub fn categorize(id: ClassId, taxonomy: &ClassTaxonomy) -> Result<Category> {
    taxonomy.categorize(id)
}

/// Per-pixel semantic label grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMap {
    width: usize,
    height: usize,
    labels: Vec<ClassId>,
}

impl SegMap {
    pub fn new(width: usize, height: usize, labels: Vec<ClassId>, taxonomy: &ClassTaxonomy) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Truncated {
                expected: width * height,
                found: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|l| !taxonomy.contains(l.0 as u32)) {
            return Err(Error::UnknownClass(bad.0 as u32));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, id: ClassId) -> Self {
        Self {
            width,
            height,
            labels: vec![id; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> ClassId {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, id: ClassId) {
        self.labels[y * self.width + x] = id;
    }

    pub fn class_mask(&self, id: ClassId) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| self.get(x, y) == id)
    }

    pub fn category_mask(&self, category: Category, taxonomy: &ClassTaxonomy) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| {
            taxonomy.categorize(self.get(x, y)).ok() == Some(category)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_examples() {
        let tax = ClassTaxonomy::default();
        assert_eq!(tax.categorize(ClassId::CAR).unwrap(), Category::Thing);
        assert_eq!(tax.categorize(ClassId::ROAD).unwrap(), Category::Plane);
        assert_eq!(tax.categorize(ClassId::UNKNOWN).unwrap(), Category::Stuff);
    }

    #[test]
    fn unknown_identifier_is_an_error() {
        let tax = ClassTaxonomy::default();
        assert!(matches!(tax.categorize(ClassId(22)), Err(Error::UnknownClass(22))));
    }

    #[test]
    fn total_and_disjoint() {
        let tax = ClassTaxonomy::default();
        assert_eq!(tax.len(), 22);
        let things = tax.classes_in(Category::Thing);
        let planes = tax.classes_in(Category::Plane);
        let stuff = tax.classes_in(Category::Stuff);
        assert_eq!(things.len(), 14);
        assert_eq!(planes, vec![ClassId::ROAD, ClassId::SKY, ClassId::WATER]);
        assert_eq!(things.len() + planes.len() + stuff.len(), 22);
        for id in 0..22u8 {
            // deterministic
            assert_eq!(tax.categorize(ClassId(id)).unwrap(), tax.categorize(ClassId(id)).unwrap());
        }
        for name in [
            "aeroplane", "bicycle", "bird", "boat", "bus", "car", "cat", "cow", "dog", "horse",
            "motorbike", "sheep", "train", "person",
        ] {
            let id = tax.class_by_name(name).unwrap();
            assert_eq!(tax.categorize(id).unwrap(), Category::Thing, "{name}");
        }
    }

    #[test]
    fn segmap_rejects_foreign_labels() {
        let tax = ClassTaxonomy::default();
        assert!(SegMap::new(2, 1, vec![ClassId(0), ClassId(40)], &tax).is_err());
        let seg = SegMap::new(2, 1, vec![ClassId::CAR, ClassId::ROAD], &tax).unwrap();
        assert_eq!(seg.category_mask(Category::Plane, &tax).data(), &[false, true]);
    }
}
