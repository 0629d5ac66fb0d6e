# BCS Workbench Tests
