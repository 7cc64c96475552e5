//! Generated suites, JSON round trips and TSPLIB input.

use hklearn::instance::{parse_tsplib, DatasetConfig, Instance, TsplibOptions};

const SQUARE: &str = "NAME : square5
TYPE : TSP
DIMENSION : 5
EDGE_WEIGHT_TYPE : EUC_2D
NODE_COORD_SECTION
1 0 0
2 10 0
3 10 10
4 0 10
5 5 5
EOF
";

fn main() {
    let random = DatasetConfig::random(20, 7).generate_many(3).unwrap();
    let clustered = DatasetConfig::clustered(20, 7).generate_many(3).unwrap();
    for inst in random.iter().chain(&clustered) {
        let p = inst.provenance();
        println!("{:<16} n={} first node features {:?}", p.name, inst.n(), inst.node_features()[0].map(|x| (x * 1e3).round() / 1e3));
    }

    let dir = std::env::temp_dir().join("hklearn-instances");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("random20.json");
    random[0].save(&path).unwrap();
    let back = Instance::load(&path).unwrap();
    assert_eq!(back, random[0]);
    println!("round trip through {} is exact", path.display());

    let square = parse_tsplib(SQUARE, TsplibOptions { round: true }).unwrap();
    println!("{}: costs from node 0 {:?}", square.provenance().name, (1..5).map(|j| square.cost(0, j)).collect::<Vec<_>>());
}
