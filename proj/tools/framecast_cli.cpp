// Placeholder; full CLI lands with the experiment runner.
int main() { return 0; }
