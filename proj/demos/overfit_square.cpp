// Placeholder; demo lands with the model harness.
int main() { return 0; }
