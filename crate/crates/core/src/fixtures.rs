//! Small seeded tables with known column dependencies, used by tests, the
//! acceptance suite and the CLI demo config.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Cell, ColumnSpec, DataTable, TableSchema, Task};

pub const COLORS: [&str; 4] = ["red", "green", "blue", "yellow"];
pub const SHAPES: [&str; 4] = ["circle", "square", "triangle", "star"];

/// Shape determined by color.
pub fn shape_of(color: &str) -> Option<&'static str> {
    COLORS.iter().position(|c| *c == color).map(|i| SHAPES[i])
}

/// Label determined by size and color: "high" iff `size + bonus >= 4`,
/// where the bonus is the color's index (red 0 .. yellow 3).
pub fn label_of(color: &str, size: f64) -> Option<&'static str> {
    let bonus = COLORS.iter().position(|c| *c == color)? as f64;
    Some(if size + bonus >= 4.0 { "high" } else { "low" })
}

/// Raw (unencoded, unnormalized) 4-column table: `color`, `shape`, `size`
/// (integer 1..=4, continuous) and the classification target `label`.
pub fn dependency_fixture(n_rows: usize, seed: u64) -> DataTable {
    let schema = TableSchema::new(
        vec![
            ColumnSpec::categorical("color", COLORS.iter().map(|s| s.to_string()).collect()),
            ColumnSpec::categorical("shape", SHAPES.iter().map(|s| s.to_string()).collect()),
            ColumnSpec::continuous("size"),
            ColumnSpec::categorical("label", vec!["low".into(), "high".into()]),
        ],
        "label",
        Task::Classification,
    )
    .expect("fixture schema is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n_rows)
        .map(|_| {
            let color = COLORS[rng.random_range(0..COLORS.len())];
            let size = rng.random_range(1..=4) as f64;
            vec![
                Cell::Text(color.into()),
                Cell::Text(shape_of(color).unwrap().into()),
                Cell::Number(size),
                Cell::Text(label_of(color, size).unwrap().into()),
            ]
        })
        .collect();
    DataTable::new(schema, rows).expect("fixture rows match schema")
}

/// Fraction of encoded or raw rows of a dependency-fixture table that obey
/// both the shape and the label rule. Sizes are rounded to the nearest integer.
pub fn dependency_rate(table: &DataTable) -> f64 {
    if table.is_empty() {
        return 0.0;
    }
    let ok = table
        .rows
        .iter()
        .filter(|row| {
            let text = |j: usize| table.cell_text(j, &row[j]);
            let color = text(0);
            let size = row[2].as_f64().map(f64::round);
            shape_of(&color) == Some(text(1).as_str())
                && size.and_then(|s| label_of(&color, s)) == Some(text(3).as_str())
        })
        .count();
    ok as f64 / table.len() as f64
}

pub const REGIONS: [&str; 4] = ["north", "south", "east", "west"];
pub const PRODUCTS: [&str; 4] = ["parka", "sandals", "umbrella", "boots"];
/// Relative weights of 0, 1, 2 and 3 children per parent.
pub const CHILD_COUNT_WEIGHTS: [u32; 4] = [1, 3, 4, 2];

/// Product bought by children of a parent in `region`.
pub fn product_of(region: &str) -> Option<&'static str> {
    REGIONS.iter().position(|r| *r == region).map(|i| PRODUCTS[i])
}

/// Raw parent (`id`, `region`, `budget`) and child (`parent_id`, `product`,
/// `qty`) tables. Each child's product is a function of its parent's region.
pub fn relational_fixture(n_parents: usize, seed: u64) -> (DataTable, DataTable) {
    let parent_schema = TableSchema::new(
        vec![
            ColumnSpec::continuous("id"),
            ColumnSpec::categorical("region", REGIONS.iter().map(|s| s.to_string()).collect()),
            ColumnSpec::continuous("budget"),
        ],
        "region",
        Task::Classification,
    )
    .expect("fixture schema is valid");
    let child_schema = TableSchema::new(
        vec![
            ColumnSpec::continuous("parent_id"),
            ColumnSpec::categorical("product", PRODUCTS.iter().map(|s| s.to_string()).collect()),
            ColumnSpec::continuous("qty"),
        ],
        "product",
        Task::Classification,
    )
    .expect("fixture schema is valid");
    let total: u32 = CHILD_COUNT_WEIGHTS.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parents = Vec::with_capacity(n_parents);
    let mut children = Vec::new();
    for p in 0..n_parents {
        let id = (p + 1) as f64;
        let region = REGIONS[rng.random_range(0..REGIONS.len())];
        let budget = (rng.random_range(1..=5) * 100) as f64;
        parents.push(vec![
            Cell::Number(id),
            Cell::Text(region.into()),
            Cell::Number(budget),
        ]);
        let mut draw = rng.random_range(0..total);
        let mut count = 0;
        while draw >= CHILD_COUNT_WEIGHTS[count] {
            draw -= CHILD_COUNT_WEIGHTS[count];
            count += 1;
        }
        for _ in 0..count {
            children.push(vec![
                Cell::Number(id),
                Cell::Text(product_of(region).unwrap().into()),
                Cell::Number(rng.random_range(1..=3) as f64),
            ]);
        }
    }
    (
        DataTable::new(parent_schema, parents).expect("fixture rows match schema"),
        DataTable::new(child_schema, children).expect("fixture rows match schema"),
    )
}
