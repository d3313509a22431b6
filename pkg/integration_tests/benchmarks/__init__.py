# Benchmark flow scripts package marker
