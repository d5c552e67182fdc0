// Placeholder CLI; recipes are added with the experiment driver.
int main() { return 0; }
